//! Post-processing: DIC, parameter summaries and posterior correlations of
//! the effect field.

use std::cmp::Ordering;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ArealDataset;
use crate::error::{Error, Result};
use crate::fit::PosteriorSamples;
use crate::io::{csv_writer, fmt_f64, Provenance};

/// Plug-in used for `Dhat`: posterior means of `p_ij` / `eta_ij`.
pub const MID_LEVEL_FOCUS: &str = "mid-level";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dbar: f64,
    pub dhat: f64,
    pub pd: f64,
    pub dic: f64,
    pub focus: String,
}

impl DicReport {
    pub fn from_deviances(dbar: f64, dhat: f64, focus: &str) -> Self {
        let pd = dbar - dhat;
        DicReport {
            dbar,
            dhat,
            pd,
            dic: dbar + pd,
            focus: focus.to_string(),
        }
    }

    /// Report from published `Dbar` and `pD` values.
    pub fn from_dbar_pd(dbar: f64, pd: f64) -> Self {
        DicReport {
            dbar,
            dhat: dbar - pd,
            pd,
            dic: dbar + pd,
            focus: MID_LEVEL_FOCUS.to_string(),
        }
    }
}

/// DIC at the mid-level focus: `Dbar` is the mean stored deviance and
/// `Dhat` the deviance at the posterior means of `p_ij` (binomial) or
/// `eta_ij` (Poisson).
pub fn dic(samples: &PosteriorSamples, data: &ArealDataset) -> Result<DicReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.len() < 2 {
        return Err(Error::Validation("DIC needs at least two stored draws".into()));
    }
    let n = samples.len() as f64;
    let dbar = samples.deviance.iter().sum::<f64>() / n;
    let units = data.units();
    let mut mid = vec![0.0; data.len()];
    for d in 0..samples.len() {
        for (m, g) in samples.gamma(d).into_iter().enumerate() {
            mid[m] += data.likelihood(m / units).mid_level(g);
        }
    }
    for v in &mut mid {
        *v /= n;
    }
    let dhat = data.deviance_mid_level(&mid);
    Ok(DicReport::from_deviances(dbar, dhat, MID_LEVEL_FOCUS))
}

/// A labelled report, e.g. one fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDic {
    pub label: String,
    pub report: DicReport,
}

/// Sorts by DIC ascending; ties keep input order.
pub fn compare(reports: Vec<LabelledDic>) -> Result<Vec<LabelledDic>> {
    if reports.len() < 2 {
        return Err(Error::Validation(format!(
            "comparison needs at least two DIC reports, got {}",
            reports.len()
        )));
    }
    let mut sorted = reports;
    sorted.sort_by(|a, b| a.report.dic.partial_cmp(&b.report.dic).unwrap_or(Ordering::Equal));
    Ok(sorted)
}

pub fn format_comparison(rows: &[LabelledDic]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>12}  {:>10}  {:>12}\n", "model", "Dbar", "pD", "DIC");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>12.1}  {:>10.1}  {:>12.1}\n",
            r.label, r.report.dbar, r.report.pd, r.report.dic
        ));
    }
    out
}

/// Three values each rounded to 0.1 can disagree by up to 0.15.
const DIC_ROUNDING_SLACK: f64 = 0.15 + 1e-9;

const DIC_HEADER: [&str; 6] = ["model", "Dbar", "Dhat", "pD", "DIC", "focus"];

pub fn write_dic_csv(path: &Path, rows: &[LabelledDic], provenance: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(DIC_HEADER)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            fmt_f64(r.report.dbar),
            fmt_f64(r.report.dhat),
            fmt_f64(r.report.pd),
            fmt_f64(r.report.dic),
            r.report.focus.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct DicRow {
    model: String,
    #[serde(rename = "Dbar")]
    dbar: f64,
    #[serde(rename = "Dhat")]
    dhat: Option<f64>,
    #[serde(rename = "pD")]
    pd: f64,
    #[serde(rename = "DIC")]
    dic: f64,
    focus: Option<String>,
}

/// Reads a DIC CSV. `Dhat` and `focus` may be omitted; the stated `DIC`
/// must equal `Dbar + pD` up to rounding of values printed to one decimal.
pub fn read_dic_csv(path: &Path) -> Result<Vec<LabelledDic>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<DicRow>().enumerate() {
        let row = row?;
        let expected = row.dbar + row.pd;
        if (row.dic - expected).abs() > DIC_ROUNDING_SLACK {
            return Err(Error::Parse {
                line: k + 2,
                message: format!("DIC {} does not equal Dbar + pD = {expected}", row.dic),
            });
        }
        out.push(LabelledDic {
            label: row.model,
            report: DicReport {
                dbar: row.dbar,
                dhat: row.dhat.unwrap_or(row.dbar - row.pd),
                pd: row.pd,
                dic: row.dic,
                focus: row.focus.unwrap_or_else(|| MID_LEVEL_FOCUS.to_string()),
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_trace(name: &str, trace: &[f64]) -> Result<ParamSummary> {
    if trace.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let sd = if trace.len() > 1 {
        (trace.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ParamSummary {
        parameter: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        median: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
    })
}

/// Summaries of every stored parameter (intercepts, effects, hyperparameters).
pub fn summarize(samples: &PosteriorSamples) -> Result<Vec<ParamSummary>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let names = samples.parameter_names();
    let rows: Vec<Vec<f64>> = (0..samples.len()).map(|d| samples.row(d)).collect();
    names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let trace: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            summarize_trace(name, &trace)
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 6] = ["parameter", "mean", "sd", "q025", "median", "q975"];

pub fn write_summary_csv(path: &Path, rows: &[ParamSummary], provenance: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.q025),
            fmt_f64(r.median),
            fmt_f64(r.q975),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior mean and sd of each `u_ij`, in storage order.
pub fn u_moments(samples: &PosteriorSamples) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dim = samples.u[0].len();
    (0..dim)
        .map(|m| {
            let trace: Vec<f64> = samples.u.iter().map(|u| u[m]).collect();
            summarize_trace("u", &trace).map(|s| (s.mean, s.sd))
        })
        .collect()
}

/// Correlation across units between the posterior-mean columns `u_.j` and
/// `u_.j'`. Entries involving a zero-variance column are NaN.
pub fn posterior_u_correlations(samples: &PosteriorSamples) -> Result<DMatrix<f64>> {
    let moments = u_moments(samples)?;
    let units = samples.units;
    let responses = samples.responses;
    let means: Vec<Vec<f64>> = (0..responses)
        .map(|j| (0..units).map(|i| moments[j * units + i].0).collect())
        .collect();
    Ok(column_correlations(&means))
}

fn column_correlations(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let k = cols.len();
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    DMatrix::from_fn(k, k, |a, b| {
        if norms[a] == 0.0 || norms[b] == 0.0 {
            return f64::NAN;
        }
        if a == b {
            return 1.0;
        }
        centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / (norms[a] * norms[b])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Likelihood;

    fn samples_with(
        u: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        deviance: Vec<f64>,
        units: usize,
        responses: usize,
    ) -> PosteriorSamples {
        let n = deviance.len();
        PosteriorSamples {
            units,
            responses,
            hyper_names: vec![],
            chain: vec![0; n],
            iteration: (1..=n).collect(),
            beta,
            u,
            hyper: vec![vec![]; n],
            deviance,
        }
    }

    #[test]
    fn published_dic_arithmetic() {
        let r = DicReport::from_dbar_pd(4598.8, 457.9);
        assert!((r.dic - 5056.7).abs() < 1e-9);
        assert_eq!(r.dic, r.dbar + r.pd);
    }

    #[test]
    fn constant_deviance_gives_zero_pd() {
        // all draws share the same gamma, so Dhat equals every stored deviance
        let data = ArealDataset::new(2, 1, vec![3, 4], vec![10.0, 10.0], vec![Likelihood::BinomialLogit]).unwrap();
        let gamma = [0.2, -0.1];
        let dev = data.deviance(&gamma);
        let s = samples_with(vec![gamma.to_vec(); 3], vec![vec![0.0]; 3], vec![dev; 3], 2, 1);
        let r = dic(&s, &data).unwrap();
        assert!(r.pd.abs() < 1e-9);
        assert!((r.dic - r.dbar).abs() < 1e-9);
    }

    #[test]
    fn two_draw_hand_computation() {
        // one Poisson cell, y = 2, E = 1; draws eta = 1 and eta = 3
        let data = ArealDataset::new(1, 1, vec![2], vec![1.0], vec![Likelihood::PoissonLognormal]).unwrap();
        let ll = |eta: f64| -eta + 2.0 * eta.ln() - 2f64.ln();
        let d1 = -2.0 * ll(1.0);
        let d2 = -2.0 * ll(3.0);
        let s = samples_with(vec![vec![0.0], vec![3f64.ln()]], vec![vec![0.0]; 2], vec![d1, d2], 1, 1);
        let r = dic(&s, &data).unwrap();
        let dbar = (d1 + d2) / 2.0;
        let dhat = -2.0 * ll(2.0);
        assert!((r.dbar - dbar).abs() < 1e-12);
        assert!((r.dhat - dhat).abs() < 1e-12);
        assert!((r.pd - (dbar - dhat)).abs() < 1e-12);
        assert_eq!(r.dic, r.dbar + r.pd);
        assert_eq!(r.focus, MID_LEVEL_FOCUS);
    }

    #[test]
    fn dic_needs_draws() {
        let data = ArealDataset::new(1, 1, vec![2], vec![1.0], vec![Likelihood::PoissonLognormal]).unwrap();
        let empty = samples_with(vec![], vec![], vec![], 1, 1);
        assert!(matches!(dic(&empty, &data), Err(Error::EmptySamples)));
    }

    #[test]
    fn comparison_ordering_and_ties() {
        let mk = |label: &str, dbar: f64, pd: f64| LabelledDic {
            label: label.into(),
            report: DicReport::from_dbar_pd(dbar, pd),
        };
        // complete-graph column of the published comparison
        let sorted = compare(vec![
            mk("Model 1", 4622.4, 474.7),
            mk("Model 2", 4615.4, 462.0),
            mk("Model 3", 4545.8, 515.8),
        ])
        .unwrap();
        let order: Vec<&str> = sorted.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(order, ["Model 3", "Model 2", "Model 1"]);
        assert!(compare(vec![mk("only", 1.0, 1.0)]).is_err());
        let tied = compare(vec![mk("a", 10.0, 1.0), mk("b", 9.0, 2.0), mk("c", 5.0, 1.0)]).unwrap();
        let order: Vec<&str> = tied.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn summary_basics() {
        let s = summarize_trace("c", &[2.5; 10]).unwrap();
        assert_eq!((s.mean, s.sd, s.median), (2.5, 0.0, 2.5));
        let s = summarize_trace("x", &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.0);
        assert!((s.q025 - 1.05).abs() < 1e-12);
        assert!(summarize_trace("e", &[]).is_err());
    }

    #[test]
    fn summary_normal_quantiles() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let draws: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize_trace("z", &draws).unwrap();
        assert!((s.q025 + 1.96).abs() < 0.03);
        assert!((s.q975 - 1.96).abs() < 0.03);
        assert!(s.median.abs() < 0.01);
    }

    #[test]
    fn correlations() {
        let a = vec![1.0, 2.0, 4.0, 3.0];
        let m = column_correlations(&[a.clone(), a.clone()]);
        assert!((m[(0, 1)] - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let m = column_correlations(&[a.clone(), neg]);
        assert!((m[(0, 1)] + 1.0).abs() < 1e-12);
        let m = column_correlations(&[a, vec![5.0; 4]]);
        assert!(m[(0, 1)].is_nan() && m[(1, 1)].is_nan());
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn dic_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dic.csv");
        let rows = vec![LabelledDic {
            label: "Model 2".into(),
            report: DicReport::from_deviances(100.25, 90.5, MID_LEVEL_FOCUS),
        }];
        write_dic_csv(
            &path,
            &rows,
            Some(&Provenance {
                config_hash: "x".into(),
                seed: 1,
            }),
        )
        .unwrap();
        assert_eq!(read_dic_csv(&path).unwrap(), rows);
        std::fs::write(&path, "model,Dbar,pD,DIC\nA,4541.8,514.2,5055.9\n").unwrap();
        assert_eq!(read_dic_csv(&path).unwrap()[0].report.dic, 5055.9);
        std::fs::write(&path, "model,Dbar,pD,DIC\nA,10,2,13\n").unwrap();
        assert!(matches!(read_dic_csv(&path), Err(Error::Parse { line: 2, .. })));
    }
}
