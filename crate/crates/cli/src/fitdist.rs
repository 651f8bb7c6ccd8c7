use influens::detection::{backend_threshold, ClusMipConfig};
use influens::io::read_counts;
use influens::selectors::SelectorSpec;
use influens::{Error, Selector};
use serde_json::{json, Value};

use crate::manifest::{read_input, OutDir};
use crate::settings::FitDist;
use crate::{CliError, CliResult};

pub fn run(s: &FitDist) -> CliResult<()> {
    let (bytes, digest) = read_input(&s.input)?;
    let values = read_counts(bytes.as_slice())?;
    if values.iter().all(|&v| v == 0) {
        return Err(Error::AllZeroData.into());
    }
    let max = values.iter().copied().max().unwrap_or(0);
    let trials = match s.trials {
        Some(t) if t < max => {
            return Err(CliError::Usage(format!("--trials {t} is below the largest count {max}")));
        }
        Some(t) => t,
        None => max,
    };
    let mut cfg = ClusMipConfig::new(SelectorSpec::new(Selector::Lasso), s.alpha, s.seed);
    cfg.mixture_k_max = s.k_max;
    let (rule, fit) = backend_threshold(s.family, &values, trials, &cfg)?;
    let fit = fit.expect("parametric backends return their fit");
    let mut doc: Value = serde_json::to_value(&fit).map_err(Error::from)?;
    if let Value::Object(m) = &mut doc {
        m.insert("zeta".into(), json!(1.0 - s.alpha));
        m.insert("cutoff".into(), json!(rule.cutoff));
    }
    println!("{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?);
    let mut out = OutDir::create(&s.out)?;
    out.write_json("fit.json", &doc)?;
    out.finish("fit-dist", Some(s.seed), s, s.config_file.as_deref(), vec![digest])
}
