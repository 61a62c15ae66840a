//! Artifact formats.
//!
//! `traces.csv`: header `trial,t,z_true,<scheme>...` (schemes that ran, in
//! configuration order), one row per trial and step, velocities in km/h,
//! every float written as `{:.16e}` (17 significant digits).
//!
//! `summary.json`: `{"config": ..., "kappa", "no_privacy_mse", "lambda_cap",
//! "schemes": {"<scheme>": {"rmse", "stderr", "mse", "mse_stderr",
//! "settling_time", "settling_censored", "predicted_mse", "predicted_rmse",
//! "gamma", "gamma_filter_form", "kappa", "input_noise_std",
//! "output_noise_std"} | {"error": "..."}}}`. Result floats carry 17
//! significant digits; missing or non-finite values are `null`.

use std::io::Write;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::value::RawValue;

use super::sim::{SchemeOutcome, SimulationOutput, Traces};

/// Float serialized with 17 significant digits (`null` if non-finite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl F17 {
    pub fn format(v: f64) -> String {
        format!("{v:.16e}")
    }
}

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(Self::format(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn write_traces_csv(traces: &Traces, mut out: impl Write) -> std::io::Result<()> {
    let mut header = String::from("trial,t,z_true");
    for s in &traces.schemes {
        header.push(',');
        header.push_str(s.name());
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for trial in 0..traces.trials {
        for t in 0..traces.horizon {
            let i = traces.index(trial, t);
            line.clear();
            line.push_str(&format!("{trial},{t},{}", F17::format(traces.z_true[i])));
            for est in &traces.estimates {
                line.push(',');
                line.push_str(&F17::format(est[i]));
            }
            writeln!(out, "{line}")?;
        }
    }
    out.flush()
}

#[derive(Serialize)]
struct SchemeEntry {
    rmse: F17,
    stderr: F17,
    mse: F17,
    mse_stderr: F17,
    settling_time: usize,
    settling_censored: bool,
    predicted_mse: F17,
    predicted_rmse: F17,
    gamma: Option<F17>,
    gamma_filter_form: Option<F17>,
    kappa: F17,
    input_noise_std: F17,
    output_noise_std: F17,
}

#[derive(Serialize)]
struct ErrorEntry<'a> {
    error: &'a str,
}

struct Schemes<'a>(&'a [SchemeOutcome]);

impl Serialize for Schemes<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for outcome in self.0 {
            let key = outcome.scheme().name();
            match outcome {
                SchemeOutcome::Ran(r) => map.serialize_entry(
                    key,
                    &SchemeEntry {
                        rmse: F17(r.rmse),
                        stderr: F17(r.stderr),
                        mse: F17(r.mse),
                        mse_stderr: F17(r.mse_stderr),
                        settling_time: r.settling.step,
                        settling_censored: r.settling.censored,
                        predicted_mse: F17(r.predicted_mse),
                        predicted_rmse: F17(r.predicted_mse.sqrt()),
                        gamma: r.gamma.map(F17),
                        gamma_filter_form: r.gamma_filter_form.map(F17),
                        kappa: F17(r.kappa),
                        input_noise_std: F17(r.input_noise_std),
                        output_noise_std: F17(r.output_noise_std),
                    },
                )?,
                SchemeOutcome::Failed { error, .. } => map.serialize_entry(key, &ErrorEntry { error })?,
            }
        }
        map.end()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a super::SimulationConfig,
    kappa: F17,
    no_privacy_mse: F17,
    lambda_cap: Option<F17>,
    schemes: Schemes<'a>,
}

/// The summary document, pretty-printed, with a trailing newline.
pub fn summary_json(output: &SimulationOutput) -> String {
    let doc = Summary {
        config: &output.config,
        kappa: F17(output.kappa),
        no_privacy_mse: F17(output.no_privacy_mse),
        lambda_cap: output.lambda_cap.map(F17),
        schemes: Schemes(&output.outcomes),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpkalman::Scheme;

    #[test]
    fn seventeen_digits() {
        assert_eq!(F17::format(0.1), "1.0000000000000001e-1");
        assert_eq!(serde_json::to_string(&F17(2.5)).unwrap(), "2.5000000000000000e0");
        assert_eq!(serde_json::to_string(&F17(f64::NAN)).unwrap(), "null");
        let back: f64 = serde_json::from_str(&serde_json::to_string(&F17(1.0 / 3.0)).unwrap()).unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn csv_layout() {
        let traces = Traces {
            schemes: vec![Scheme::NaiveInput, Scheme::OutputKalman],
            trials: 1,
            horizon: 2,
            z_true: vec![45.0, 46.0],
            estimates: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        };
        let mut buf = Vec::new();
        write_traces_csv(&traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "trial,t,z_true,naive-input,output-kalman");
        assert_eq!(
            lines[2],
            "0,1,4.6000000000000000e1,2.0000000000000000e0,4.0000000000000000e0"
        );
        assert_eq!(lines.len(), 3);
    }
}
