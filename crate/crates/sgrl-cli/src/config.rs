//! Flat key=value run configuration. Keys mirror the pipeline, generator and
//! gbdt fields with dotted prefixes; every key has a default, unknown keys
//! are rejected, and the parsed configuration is echoed into run outputs.

use sgrl_core::error::{Error, Result};
use sgrl_core::gbdt::ImportanceKind;
use sgrl_core::pipeline::PipelineConfig;
use sgrl_core::synth::{default_config, SynthConfig};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            synth: default_config(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Route one key to its field. Errors name the offending key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::config(format!("bad value for key {key:?}: {value:?}"));
        let p = &mut self.pipeline;
        let s = &mut self.synth;
        match key {
            "pipeline.f" => p.f = value.parse().map_err(|_| bad())?,
            "pipeline.f1" => p.f1 = value.parse().map_err(|_| bad())?,
            "pipeline.f_det" => p.f_det = value.parse().map_err(|_| bad())?,
            "pipeline.f1_det" => p.f1_det = value.parse().map_err(|_| bad())?,
            "pipeline.k" => p.k = value.parse().map_err(|_| bad())?,
            "pipeline.rho" => p.rho = value.parse().map_err(|_| bad())?,
            "pipeline.r_hat" => p.r_hat = value.parse().map_err(|_| bad())?,
            "pipeline.max_epochs" => p.max_epochs = value.parse().map_err(|_| bad())?,
            "pipeline.probe_holdout" => p.probe_holdout = value.parse().map_err(|_| bad())?,
            "pipeline.probe_patience" => p.probe_patience = value.parse().map_err(|_| bad())?,
            "pipeline.learning_rate" => p.learning_rate = value.parse().map_err(|_| bad())?,
            "pipeline.sgrl_sa" => p.sgrl_sa = value.parse().map_err(|_| bad())?,
            "pipeline.seed" => p.seed = value.parse().map_err(|_| bad())?,
            "gbdt.learning_rate" => p.gbdt.learning_rate = value.parse().map_err(|_| bad())?,
            "gbdt.max_depth" => p.gbdt.max_depth = value.parse().map_err(|_| bad())?,
            "gbdt.n_estimators" => p.gbdt.n_estimators = value.parse().map_err(|_| bad())?,
            "gbdt.subsample" => p.gbdt.subsample = value.parse().map_err(|_| bad())?,
            "gbdt.colsample_bytree" => {
                p.gbdt.colsample_bytree = value.parse().map_err(|_| bad())?
            }
            "gbdt.early_stopping_rounds" => {
                p.gbdt.early_stopping_rounds = value.parse().map_err(|_| bad())?
            }
            "gbdt.lambda" => p.gbdt.lambda = value.parse().map_err(|_| bad())?,
            "gbdt.importance" => {
                p.gbdt.importance = match value {
                    "gain" => ImportanceKind::Gain,
                    "frequency" => ImportanceKind::Frequency,
                    _ => return Err(bad()),
                }
            }
            "synth.n_normal" => s.n_normal = value.parse().map_err(|_| bad())?,
            "synth.n_motifs" => s.n_motifs = value.parse().map_err(|_| bad())?,
            "synth.transaction_accounts" => {
                s.transaction_accounts = value.parse().map_err(|_| bad())?
            }
            "synth.service_accounts" => s.service_accounts = value.parse().map_err(|_| bad())?,
            "synth.camouflage_accounts" => {
                s.camouflage_accounts = value.parse().map_err(|_| bad())?
            }
            "synth.buyer_accounts" => s.buyer_accounts = value.parse().map_err(|_| bad())?,
            "synth.background_edges" => s.background_edges = value.parse().map_err(|_| bad())?,
            "synth.informative" => {
                let (a, b) = value.split_once(',').ok_or_else(bad)?;
                s.informative = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
            }
            "synth.p_informative_bma" => {
                s.p_informative_bma = value.parse().map_err(|_| bad())?
            }
            "synth.p_informative_other" => {
                s.p_informative_other = value.parse().map_err(|_| bad())?
            }
            "synth.p_background_attr" => {
                s.p_background_attr = value.parse().map_err(|_| bad())?
            }
            "synth.observed_fraction" => {
                s.observed_fraction = value.parse().map_err(|_| bad())?
            }
            "synth.seed" => s.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// One master seed drives every subsystem.
    pub fn override_seed(&mut self, seed: u64) {
        self.pipeline.seed = seed;
        self.synth.seed = seed;
    }

    /// Full effective configuration, re-parseable as a config file.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let s = &self.synth;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("pipeline.f", p.f.to_string());
        kv("pipeline.f1", p.f1.to_string());
        kv("pipeline.f_det", p.f_det.to_string());
        kv("pipeline.f1_det", p.f1_det.to_string());
        kv("pipeline.k", p.k.to_string());
        kv("pipeline.rho", p.rho.to_string());
        kv("pipeline.r_hat", p.r_hat.to_string());
        kv("pipeline.max_epochs", p.max_epochs.to_string());
        kv("pipeline.probe_holdout", p.probe_holdout.to_string());
        kv("pipeline.probe_patience", p.probe_patience.to_string());
        kv("pipeline.learning_rate", p.learning_rate.to_string());
        kv("pipeline.sgrl_sa", p.sgrl_sa.to_string());
        kv("pipeline.seed", p.seed.to_string());
        kv("gbdt.learning_rate", p.gbdt.learning_rate.to_string());
        kv("gbdt.max_depth", p.gbdt.max_depth.to_string());
        kv("gbdt.n_estimators", p.gbdt.n_estimators.to_string());
        kv("gbdt.subsample", p.gbdt.subsample.to_string());
        kv("gbdt.colsample_bytree", p.gbdt.colsample_bytree.to_string());
        kv(
            "gbdt.early_stopping_rounds",
            p.gbdt.early_stopping_rounds.to_string(),
        );
        kv("gbdt.lambda", p.gbdt.lambda.to_string());
        kv(
            "gbdt.importance",
            match p.gbdt.importance {
                ImportanceKind::Gain => "gain".to_string(),
                ImportanceKind::Frequency => "frequency".to_string(),
            },
        );
        kv("synth.n_normal", s.n_normal.to_string());
        kv("synth.n_motifs", s.n_motifs.to_string());
        kv("synth.transaction_accounts", s.transaction_accounts.to_string());
        kv("synth.service_accounts", s.service_accounts.to_string());
        kv("synth.camouflage_accounts", s.camouflage_accounts.to_string());
        kv("synth.buyer_accounts", s.buyer_accounts.to_string());
        kv("synth.background_edges", s.background_edges.to_string());
        kv(
            "synth.informative",
            format!("{},{}", s.informative.0, s.informative.1),
        );
        kv("synth.p_informative_bma", s.p_informative_bma.to_string());
        kv("synth.p_informative_other", s.p_informative_other.to_string());
        kv("synth.p_background_attr", s.p_background_attr.to_string());
        kv("synth.observed_fraction", s.observed_fraction.to_string());
        kv("synth.seed", s.seed.to_string());
        out
    }
}
