//! The end-to-end run: pre-train, extract, relabel, refit, probe.

use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use super::cache::{stage_key, StageCache};
use super::config::{derive_seed, DataSource, ExperimentConfig, RelabelStrategy};
use super::results::{ResultRow, ResultsTable};
use super::synth::{synth_generate, SynthSpec};
use crate::error::{Error, Result, StageExt};
use crate::featurestore::{read_features, read_labels};
use crate::featurestore::{l2_normalize, Dataset, DatasetRole, FeatureMatrix, LabelVector};
use crate::kmeans::KMeansConfig;
use crate::nnet::{extract_features, train, MlpModel, MlpSpec, Objective, TrainConfig};
use crate::probe::{probe_lr_sweep, ProbeConfig};
use crate::relabel::{
    inject_noise, per_label_plan, per_label_pseudo_labels, prototype_labels, pseudo_labels,
    NoiseSpec,
};

/// A labeled train/eval pair used for linear probing.
#[derive(Debug, Clone)]
pub struct ProbeTarget {
    pub name: String,
    pub train: Dataset,
    pub eval: Dataset,
}

#[derive(Debug, Clone)]
pub struct PipelineData {
    pub pretrain: Dataset,
    /// `None` when the clustering split is the pre-training split.
    pub clusterfit: Option<Dataset>,
    pub targets: Vec<ProbeTarget>,
    /// Size of the pre-training label space.
    pub m: usize,
}

/// Output of one training stage.
#[derive(Debug)]
struct Trained {
    model: MlpModel,
    seconds: f64,
}

/// A stage value together with its cache key.
struct Staged<T> {
    key: String,
    value: Arc<T>,
}

/// Runs the pipeline with a private cache.
pub fn clusterfit_run(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    clusterfit_run_cached(cfg, &StageCache::new())
}

/// Runs the pipeline, reusing stages from `cache` whose inputs are unchanged.
///
/// On failure the rows finished so far are written to `cfg.output` (when
/// set) and the error names the failing stage.
pub fn clusterfit_run_cached(cfg: &ExperimentConfig, cache: &StageCache) -> Result<ResultsTable> {
    cfg.validate().stage("config")?;
    let mut table = ResultsTable {
        rows: vec![],
        config: Some(serde_json::to_value(cfg)?),
    };
    let outcome = Run { cfg, cache }.execute(&mut table.rows);
    if let Some(path) = &cfg.output {
        table.write_csv(path).stage("output")?;
    }
    outcome.map(|()| table)
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    cache: &'a StageCache,
}

impl Run<'_> {
    fn seed(&self, tag: &str, component: u64) -> u64 {
        derive_seed(self.cfg.seed, tag, component)
    }

    fn execute(&self, rows: &mut Vec<ResultRow>) -> Result<()> {
        let cfg = self.cfg;
        let data = self.data().stage("data")?;
        let noisy = self.noisy_labels(&data).stage("noise")?;
        let pre_spec = MlpSpec::new(
            data.value.pretrain.features.d(),
            cfg.pretrain.hidden.clone(),
            vec![data.value.m],
        )
        .stage("pretrain")?
        .scaled(cfg.pretrain.capacity);
        let pre_train_cfg = TrainConfig {
            seed: self.seed("npre", cfg.pretrain.train.seed),
            ..cfg.pretrain.train.clone()
        };
        let npre = self
            .train_stage(
                "npre",
                &data.value.pretrain.features,
                &noisy,
                &pre_spec,
                &pre_train_cfg,
                json!({ "data": data.key, "labels": noisy.key }),
                None,
            )
            .stage("pretrain")?;
        if cfg.baselines.npre {
            self.probe_all("npre", &data, &npre, rows).stage("probe")?;
        }

        if cfg.baselines.npre2x {
            let model = self
                .train_stage(
                    "npre2x",
                    &data.value.pretrain.features,
                    &noisy,
                    &pre_spec,
                    &pre_train_cfg.stretched(2),
                    json!({ "data": data.key, "labels": noisy.key }),
                    None,
                )
                .stage("npre2x")?;
            self.probe_all("npre2x", &data, &model, rows).stage("probe")?;
        }

        let refit_spec = |heads: usize| -> Result<MlpSpec> {
            MlpSpec::new(
                data.value.pretrain.features.d(),
                cfg.clusterfit.hidden.clone(),
                vec![heads],
            )
        };
        let refit_train_cfg = TrainConfig {
            seed: self.seed("ncf", cfg.clusterfit.train.seed),
            ..cfg.clusterfit.train.clone()
        };

        if let Some(distill) = cfg.baselines.distill {
            let spec = refit_spec(data.value.m).stage("distill")?;
            let model = self
                .train_stage(
                    "distill",
                    &data.value.pretrain.features,
                    &noisy,
                    &spec,
                    &refit_train_cfg,
                    json!({ "data": data.key, "labels": noisy.key, "teacher": npre.key,
                            "distill": distill }),
                    Some((&npre.value.model, distill)),
                )
                .stage("distill")?;
            self.probe_all("distill", &data, &model, rows).stage("probe")?;
        }

        let features = self.extract(&data, &npre).stage("extract")?;
        let cf_labels = self.clusterfit_labels(&data, &noisy);

        let mut strategies = vec![];
        if cfg.baselines.prototype && cfg.clusterfit.strategy != RelabelStrategy::Prototype {
            strategies.push(RelabelStrategy::Prototype);
        }
        strategies.push(cfg.clusterfit.strategy);
        for strategy in strategies {
            let pseudo = self
                .relabel(strategy, &features, &cf_labels)
                .stage("relabel")?;
            let spec = refit_spec(pseudo.value.num_classes()).stage("refit")?;
            let name = strategy.method_name();
            let model = self
                .train_stage(
                    name,
                    self.clusterfit_inputs(&data),
                    &pseudo,
                    &spec,
                    &refit_train_cfg,
                    json!({ "data": data.key, "labels": pseudo.key }),
                    None,
                )
                .stage("refit")?;
            self.probe_all(name, &data, &model, rows).stage("probe")?;
        }
        Ok(())
    }

    fn data(&self) -> Result<Staged<PipelineData>> {
        match &self.cfg.data {
            DataSource::Synth(spec) => {
                let spec = SynthSpec {
                    seed: self.seed("synth", spec.seed),
                    pretrain_top_m: self.cfg.pretrain.top_m.or(spec.pretrain_top_m),
                    ..spec.clone()
                };
                let key = stage_key("synth", &spec);
                let want: Vec<String> = self.cfg.probe.targets.clone();
                let value = self.cache.get_or_try(&key, || synth_data(&spec, &want))?;
                Ok(Staged { key, value })
            }
            DataSource::Files(files) => {
                let key = stage_key("files", &(files, self.cfg.pretrain.top_m));
                let top_m = self.cfg.pretrain.top_m;
                let value = self.cache.get_or_try(&key, || {
                    let load = |x: &std::path::Path, y: &std::path::Path, role| {
                        Dataset::new(read_features(x)?, Some(read_labels(y)?), role)
                    };
                    let mut pretrain =
                        load(&files.pretrain_inputs, &files.pretrain_labels, DatasetRole::Pretrain)?;
                    if let Some(m) = top_m {
                        pretrain = restrict_top_m(&pretrain, m)?;
                    }
                    let clusterfit = match (&files.clusterfit_inputs, &files.clusterfit_labels) {
                        (None, None) => None,
                        (Some(x), Some(y)) => Some(load(x, y, DatasetRole::Clusterfit)?),
                        (Some(x), None) => {
                            Some(Dataset::new(read_features(x)?, None, DatasetRole::Clusterfit)?)
                        }
                        (None, Some(_)) => {
                            return Err(Error::Config(
                                "clusterfit_labels given without clusterfit_inputs".into(),
                            ))
                        }
                    };
                    let targets = files
                        .targets
                        .iter()
                        .map(|t| {
                            Ok(ProbeTarget {
                                name: t.name.clone(),
                                train: load(&t.train_inputs, &t.train_labels, DatasetRole::Target)?,
                                eval: load(&t.eval_inputs, &t.eval_labels, DatasetRole::Target)?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    let m = pretrain.require_labels()?.num_classes();
                    Ok(PipelineData {
                        pretrain,
                        clusterfit,
                        targets,
                        m,
                    })
                })?;
                Ok(Staged { key, value })
            }
        }
    }

    fn noisy_labels(&self, data: &Staged<PipelineData>) -> Result<Staged<LabelVector>> {
        let spec = NoiseSpec::new(
            self.cfg.pretrain.noise_p,
            self.seed("noise", 0),
        )?;
        let key = stage_key("noise", &(&data.key, &spec));
        let value = self.cache.get_or_try(&key, || {
            let clean = data.value.pretrain.require_labels()?;
            if spec.p == 0.0 {
                Ok(clean.clone())
            } else {
                inject_noise(clean, &spec)
            }
        })?;
        Ok(Staged { key, value })
    }

    #[allow(clippy::too_many_arguments)]
    fn train_stage(
        &self,
        tag: &str,
        inputs: &FeatureMatrix,
        labels: &Staged<LabelVector>,
        spec: &MlpSpec,
        train_cfg: &TrainConfig,
        provenance: serde_json::Value,
        teacher: Option<(&MlpModel, crate::nnet::DistillConfig)>,
    ) -> Result<Staged<Trained>> {
        let key = stage_key(tag, &(provenance, spec, train_cfg));
        let value = self.cache.get_or_try(&key, || {
            let t0 = Instant::now();
            let objective = match teacher {
                Some((teacher, config)) => Objective::Distill { config, teacher },
                None => Objective::CrossEntropy,
            };
            let report = train(spec, inputs, &labels.value, train_cfg, &objective)?;
            log::info!(
                "{tag}: {} steps, final loss {:.4}",
                report.steps,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(Trained {
                model: report.model,
                seconds: t0.elapsed().as_secs_f64(),
            })
        })?;
        Ok(Staged { key, value })
    }

    fn clusterfit_inputs<'d>(&self, data: &'d Staged<PipelineData>) -> &'d FeatureMatrix {
        match &data.value.clusterfit {
            Some(cf) => &cf.features,
            None => &data.value.pretrain.features,
        }
    }

    /// Labels available on the clustering split: the (possibly noisy)
    /// pre-training labels when the splits are shared.
    fn clusterfit_labels(
        &self,
        data: &Staged<PipelineData>,
        noisy: &Staged<LabelVector>,
    ) -> Option<Staged<LabelVector>> {
        match &data.value.clusterfit {
            None => Some(Staged {
                key: noisy.key.clone(),
                value: noisy.value.clone(),
            }),
            Some(cf) => cf.labels.clone().map(|l| Staged {
                key: stage_key("cf-labels", &data.key),
                value: Arc::new(l),
            }),
        }
    }

    fn extract(
        &self,
        data: &Staged<PipelineData>,
        npre: &Staged<Trained>,
    ) -> Result<Staged<FeatureMatrix>> {
        let l2 = self.cfg.clusterfit.l2_normalize;
        let key = stage_key("extract", &(&data.key, &npre.key, l2));
        let value = self.cache.get_or_try(&key, || {
            let f = extract_features(&npre.value.model, self.clusterfit_inputs(data))?;
            if l2 {
                l2_normalize(&f)
            } else {
                Ok(f)
            }
        })?;
        Ok(Staged { key, value })
    }

    fn relabel(
        &self,
        strategy: RelabelStrategy,
        features: &Staged<FeatureMatrix>,
        labels: &Option<Staged<LabelVector>>,
    ) -> Result<Staged<LabelVector>> {
        let km = KMeansConfig {
            seed: self.seed("kmeans", self.cfg.clusterfit.kmeans.seed),
            ..self.cfg.clusterfit.kmeans.clone()
        };
        let need_labels = || {
            labels.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "strategy {strategy:?} needs labels on the clustering split"
                ))
            })
        };
        let (key, compute): (String, Box<dyn FnOnce() -> Result<LabelVector> + '_>) =
            match strategy {
                RelabelStrategy::Unsupervised => (
                    stage_key("kmeans", &(&features.key, &km)),
                    Box::new(|| pseudo_labels(&features.value, &km)),
                ),
                RelabelStrategy::PerLabel => {
                    let labels = need_labels()?;
                    (
                        stage_key("per-label", &(&features.key, &labels.key, &km)),
                        Box::new(move || {
                            let plan = per_label_plan(&labels.value, km.k)?;
                            per_label_pseudo_labels(&features.value, &labels.value, &plan, &km)
                        }),
                    )
                }
                RelabelStrategy::Prototype => {
                    let labels = need_labels()?;
                    (
                        stage_key("prototype", &(&features.key, &labels.key)),
                        Box::new(move || prototype_labels(&features.value, &labels.value)),
                    )
                }
            };
        let value = self.cache.get_or_try(&key, compute)?;
        Ok(Staged { key, value })
    }

    fn probe_all(
        &self,
        method: &str,
        data: &Staged<PipelineData>,
        model: &Staged<Trained>,
        rows: &mut Vec<ResultRow>,
    ) -> Result<()> {
        let probe_cfg = ProbeConfig {
            seed: self.seed("probe", self.cfg.probe.config.seed),
            ..self.cfg.probe.config.clone()
        };
        for target in &data.value.targets {
            let key = stage_key(
                "probe",
                &(&model.key, &data.key, &target.name, &probe_cfg, &self.cfg.probe.lr_grid),
            );
            let t0 = Instant::now();
            let top1 = self.cache.get_or_try(&key, || {
                let m = &model.value.model;
                let train_x = extract_features(m, &target.train.features)?;
                let eval_x = extract_features(m, &target.eval.features)?;
                let (res, lr) = probe_lr_sweep(
                    &train_x,
                    target.train.require_labels()?,
                    &eval_x,
                    target.eval.require_labels()?,
                    &probe_cfg,
                    &self.cfg.probe.lr_grid,
                )?;
                log::info!("{method}/{}: top-1 {:.4} (lr {lr})", target.name, res.top1);
                Ok(res.top1)
            })?;
            rows.push(ResultRow {
                method: method.to_owned(),
                k: self.cfg.clusterfit.kmeans.k,
                p: self.cfg.pretrain.noise_p,
                m: data.value.m,
                capacity: self.cfg.pretrain.capacity,
                seed: self.cfg.seed,
                target: target.name.clone(),
                top1: *top1,
                wallclock_s: model.value.seconds + t0.elapsed().as_secs_f64(),
            });
        }
        Ok(())
    }
}

fn synth_data(spec: &SynthSpec, targets: &[String]) -> Result<PipelineData> {
    let data = synth_generate(spec)?;
    let mut probe_targets = vec![];
    for name in targets {
        let (train, eval) = match name.as_str() {
            "fine" => (data.target_train.clone(), data.target_eval.clone()),
            "coarse" => {
                let relabel = |d: &Dataset| -> Result<Dataset> {
                    Dataset::new(
                        d.features.clone(),
                        Some(data.coarse_labels(d.require_labels()?)?),
                        DatasetRole::Target,
                    )
                };
                (relabel(&data.target_train)?, relabel(&data.target_eval)?)
            }
            other => return Err(Error::Config(format!("unknown synthetic target {other:?}"))),
        };
        probe_targets.push(ProbeTarget {
            name: name.clone(),
            train,
            eval,
        });
    }
    let m = data.pretrain.require_labels()?.num_classes();
    Ok(PipelineData {
        clusterfit: (!spec.alias_clusterfit).then_some(data.clusterfit),
        pretrain: data.pretrain,
        targets: probe_targets,
        m,
    })
}

/// Keeps the rows whose label is among the `m` most frequent (ties to the
/// lower id) and renumbers those labels `0..m` in order of frequency.
pub fn restrict_top_m(data: &Dataset, m: usize) -> Result<Dataset> {
    let labels = data.require_labels()?;
    let counts = labels.class_counts();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if m > order.len() {
        return Err(Error::Config(format!(
            "top-m {m} exceeds the {} non-empty classes",
            order.len()
        )));
    }
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut rank = vec![None; counts.len()];
    for (r, &c) in order.iter().take(m).enumerate() {
        rank[c] = Some(r as u32);
    }
    let rows: Vec<usize> = (0..labels.n()).filter(|&i| rank[labels.get(i)].is_some()).collect();
    let kept: Vec<u32> = rows.iter().map(|&i| rank[labels.get(i)].unwrap()).collect();
    Dataset::new(
        data.features.select_rows(&rows),
        Some(LabelVector::new(kept, m)?),
        data.role,
    )
}
