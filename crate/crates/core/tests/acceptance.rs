//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//!     cargo test --test acceptance

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use clusterfit::featurestore::{FeatureMatrix, LabelVector};
use clusterfit::harness::{
    sweep_cached, ExperimentConfig, ResultsTable, StageCache, SweepAxis, SynthSpec,
};
use clusterfit::kmeans::{kmeans_assign, kmeans_fit, kmeans_fit_traced, KMeansConfig};
use clusterfit::nnet::{
    init_model, loss_and_grad, train, DistillConfig, MlpSpec, Objective, TrainConfig,
};
use clusterfit::probe::{probe_eval, probe_fit, ProbeConfig};
use clusterfit::relabel::{inject_noise, prototype_labels, NoiseSpec};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, f: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail} [{:.1}s]", t0.elapsed().as_secs_f64());
    };

    report("k-means correctness", &kmeans_correctness);
    report("noise injection", &noise_injection);
    report("gradient checks", &gradient_checks);
    report("probe sanity", &probe_sanity);
    report("prototype trivia", &prototype_trivia);

    let cache = StageCache::new();
    let exp = Experiments::run(&cache);
    report("control experiment", &|| exp.control());
    report("K trend", &|| exp.k_trend());
    report("strategy ablation", &|| exp.strategy());

    if failed == 0 {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn kmeans_correctness() -> Outcome {
    let t0 = Instant::now();
    // (a) per-stage monotone inertia
    let mut r = rng(1);
    let mut worst_rise: f64 = 0.0;
    for case in 0..100 {
        let n = r.random_range(20..300);
        let d = r.random_range(1..6);
        let k = r.random_range(1..9);
        let x = gaussian(&mut r, n, d, 1.0);
        let cfg = KMeansConfig {
            stage1_fraction: 0.5,
            ..KMeansConfig::new(k, case)
        };
        let fit = kmeans_fit_traced(&x, &cfg).map_err(|e| e.to_string())?;
        for trace in [&fit.stage1_inertia, &fit.stage2_inertia] {
            for w in trace.windows(2) {
                worst_rise = worst_rise.max(w[1] / w[0] - 1.0);
            }
        }
    }
    if worst_rise > 1e-12 {
        return Err(format!("inertia rose by a factor {worst_rise:e} within a stage"));
    }

    // (b) fixed point at convergence
    let mut worst_center: f64 = 0.0;
    let mut converged = 0;
    for case in 0..20 {
        let x = gaussian(&mut r, 200, 3, 1.0);
        let k = 2 + case % 5;
        let cfg = KMeansConfig {
            tol: 0.0,
            ..KMeansConfig::full_batch(k as usize, 500, case)
        };
        let c = kmeans_fit(&x, &cfg).map_err(|e| e.to_string())?;
        if c.iterations_run() >= 500 {
            continue;
        }
        converged += 1;
        let a = kmeans_assign(&x, &c).map_err(|e| e.to_string())?;
        let labels: Vec<usize> = a.assignments.iter().map(|&v| v as usize).collect();
        let means = cluster_means(&x, &labels, k as usize);
        for (m, v) in means.iter().zip(c.centers().as_slice()) {
            worst_center = worst_center.max((m - v).abs());
        }
    }
    if converged < 20 || worst_center > 1e-9 {
        return Err(format!(
            "{converged}/20 runs converged; max |center - mean| = {worst_center:e}"
        ));
    }

    // (c) four-point oracle
    let x = FeatureMatrix::from_vec(4, 2, vec![0., 0., 0., 1., 10., 0., 10., 1.]).unwrap();
    let oracle = exhaustive_min_inertia(&x, 2);
    let c = kmeans_fit(&x, &KMeansConfig::new(2, 0)).map_err(|e| e.to_string())?;
    let mut centers: Vec<[f64; 2]> = c
        .centers()
        .as_slice()
        .chunks(2)
        .map(|p| [p[0], p[1]])
        .collect();
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
    if oracle != 1.0 || c.inertia() != 1.0 || centers != [[0.0, 0.5], [10.0, 0.5]] {
        return Err(format!(
            "four points: oracle {oracle}, inertia {}, centers {centers:?}",
            c.inertia()
        ));
    }

    // (d) thread-count independence
    let x = gaussian(&mut r, 20_000, 8, 1.0);
    let cfg = KMeansConfig::new(50, 9);
    let fit_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| kmeans_fit(&x, &cfg))
            .unwrap()
    };
    let bits = |c: &clusterfit::featurestore::Centroids| -> Vec<u64> {
        c.centers()
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .chain([c.inertia().to_bits()])
            .collect()
    };
    let one = bits(&fit_with(1));
    for threads in [2, 4, 7] {
        if bits(&fit_with(threads)) != one {
            return Err(format!("{threads} threads differ from 1 thread"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        secs < 60.0,
        format!(
            "max in-stage rise {worst_rise:e}, max center error {worst_center:e}, \
             four-point inertia 1.0, bit-identical over 1/2/4/7 threads, {secs:.1}s"
        ),
    )
}

fn noise_injection() -> Outcome {
    let mut r = rng(2);
    let y = random_labels(&mut r, 10_000, 10);
    let flips = |p: f64, seed: u64| -> Result<(usize, usize), String> {
        let z = inject_noise(&y, &NoiseSpec::new(p, seed).unwrap()).map_err(|e| e.to_string())?;
        let flipped = y.iter().zip(z.iter()).filter(|(a, b)| a != b).count();
        Ok((flipped, z.n()))
    };
    let (half, n) = flips(0.5, 7)?;
    let frac = half as f64 / n as f64;
    if !(0.48..=0.52).contains(&frac) {
        return Err(format!("p=0.5 flipped {frac:.4}"));
    }
    if flips(0.0, 7)?.0 != 0 {
        return Err("p=0 changed labels".into());
    }
    if flips(1.0, 7)?.0 != n {
        return Err("p=1 left some labels unchanged".into());
    }
    // at p=1 every row is drawn for flipping, so any self-flip shows up as an
    // unchanged label
    for seed in 0..5 {
        if flips(1.0, seed)?.0 != n {
            return Err(format!("self-flip at p=1, seed {seed}"));
        }
    }
    ensure(true, format!("p=0.5 flip fraction {frac:.4}; p=0 identity; p=1 all flipped"))
}

fn gradient_checks() -> Outcome {
    let spec = MlpSpec::new(5, vec![7, 6], vec![4]).unwrap();
    let two_head = MlpSpec::new(5, vec![7, 6], vec![4, 3]).unwrap();
    let distill = DistillConfig {
        temperature: 20.0,
        alpha: 0.75,
    };
    let mut worst = [0.0f64; 3];
    for draw in 0..10u64 {
        let mut r = rng(100 + draw);
        let model = random_model(&spec, draw);
        let x = smooth_batch(&model, &mut r, 12);
        let y = random_labels(&mut r, 12, 4);
        worst[0] = worst[0].max(max_grad_rel_error(&model, &x, &y, &Objective::CrossEntropy));
        let teacher = random_model(&spec, 1000 + draw);
        worst[1] = worst[1].max(max_grad_rel_error(
            &model,
            &x,
            &y,
            &Objective::Distill {
                config: distill,
                teacher: &teacher,
            },
        ));
        let extra = [random_labels(&mut r, 12, 3)];
        let mt = random_model(&two_head, draw);
        let x = smooth_batch(&mt, &mut r, 12);
        worst[2] = worst[2].max(max_grad_rel_error(
            &mt,
            &x,
            &y,
            &Objective::MultiTask { extra: &extra },
        ));
    }
    if worst.iter().any(|&w| !(w < 1e-4)) {
        return Err(format!("max relative errors CE/distill/multitask = {worst:?}"));
    }

    // alpha = 0 distillation is plain cross-entropy
    let mut r = rng(3);
    let x = gaussian(&mut r, 300, 5, 1.0);
    let y = random_labels(&mut r, 300, 4);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    };
    let teacher = random_model(&spec, 5);
    let ce = train(&spec, &x, &y, &cfg, &Objective::CrossEntropy).map_err(|e| e.to_string())?;
    let d0 = train(
        &spec,
        &x,
        &y,
        &cfg,
        &Objective::Distill {
            config: DistillConfig {
                alpha: 0.0,
                ..distill
            },
            teacher: &teacher,
        },
    )
    .map_err(|e| e.to_string())?;
    let diff = ce
        .model
        .params()
        .flatten()
        .iter()
        .zip(d0.model.params().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        diff <= 1e-12,
        format!(
            "max relative errors CE {:.1e} / distill {:.1e} / multitask {:.1e}; \
             alpha=0 vs CE max param diff {diff:e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn probe_sanity() -> Outcome {
    let mut r = rng(4);
    let centers: Vec<Vec<f64>> = (0..5)
        .map(|c| (0..5).map(|j| if j == c { 10.0 } else { 0.0 }).collect())
        .collect();
    let (x, y) = blobs(&mut r, &centers, 60, 0.5);
    let clf = probe_fit(&x, &y, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    if clf.train_top1() != 1.0 {
        return Err(format!("separable blobs train top1 {}", clf.train_top1()));
    }

    // constant features carry no signal: predict the majority class
    let weights = [0.5, 0.3, 0.2];
    let draw = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> LabelVector {
        let labels = (0..n)
            .map(|_| {
                let u: f64 = r.random();
                if u < weights[0] {
                    0
                } else if u < weights[0] + weights[1] {
                    1
                } else {
                    2
                }
            })
            .collect();
        LabelVector::new(labels, 3).unwrap()
    };
    let (ytr, yev) = (draw(&mut r, 3000), draw(&mut r, 3000));
    let constant = |n| FeatureMatrix::from_vec(n, 3, vec![1.5; n * 3]).unwrap();
    let clf = probe_fit(&constant(3000), &ytr, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let res = probe_eval(&clf, &constant(3000), &yev).map_err(|e| e.to_string())?;
    let majority = yev.class_counts()[0] as f64 / yev.n() as f64;
    if (res.top1 - majority).abs() > 0.02 {
        return Err(format!("constant features top1 {} vs majority {majority}", res.top1));
    }

    // zero head: uniform prediction, loss ln C
    let c = 7;
    let spec = MlpSpec::new(4, vec![8], vec![c]).unwrap();
    let model = init_model(&spec, 0).map_err(|e| e.to_string())?;
    let x = gaussian(&mut r, 50, 4, 1.0);
    let y = random_labels(&mut r, 50, c);
    let (loss, _) = loss_and_grad(&model, &x, &y, &Objective::CrossEntropy).map_err(|e| e.to_string())?;
    let err = (loss - (c as f64).ln()).abs();
    ensure(
        err < 1e-6,
        format!(
            "blobs train top1 1.0; constant top1 {:.4} vs majority {majority:.4}; \
             |CE - ln C| = {err:e}",
            res.top1
        ),
    )
}

fn prototype_trivia() -> Outcome {
    let points = [[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0], [2.0, -6.0]];
    let y: Vec<u32> = (0..24).map(|i| (i * 7 % 4) as u32).collect();
    // rows of class c all sit on one point
    let x: Vec<f64> = y.iter().flat_map(|&c| points[c as usize]).collect();
    let n = y.len();
    let labels = LabelVector::new(y, points.len()).unwrap();
    let features = FeatureMatrix::from_vec(n, 2, x).unwrap();
    let out = prototype_labels(&features, &labels).map_err(|e| e.to_string())?;
    if out != labels {
        return Err("zero-variance classes were relabeled".into());
    }
    let mut r = rng(5);
    let (bx, by) = blobs(
        &mut r,
        &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        40,
        1.0,
    );
    let out = prototype_labels(&bx, &by).map_err(|e| e.to_string())?;
    ensure(
        out.num_classes() == 3,
        format!("zero-variance identity; label space {} for 3 classes", out.num_classes()),
    )
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Experiments {
    control: Result<ResultsTable, String>,
    control_secs: f64,
    k_trend: Result<ResultsTable, String>,
    strategy: Result<ResultsTable, String>,
    fine_classes: usize,
}

impl Experiments {
    fn base() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.probe.targets = vec!["fine".into()];
        cfg
    }

    fn run(cache: &StageCache) -> Self {
        let c = SynthSpec::default().num_fine();
        let mut cfg = Self::base();
        cfg.clusterfit.kmeans.k = 4 * c;
        cfg.baselines.distill = Some(DistillConfig::default());
        let t0 = Instant::now();
        let control = sweep_cached(&cfg, SweepAxis::P, &strings(&["0", "0.25", "0.5", "0.75"]), &SEEDS, cache)
            .map_err(|e| e.to_string());
        let control_secs = t0.elapsed().as_secs_f64();

        let mut cfg = Self::base();
        cfg.pretrain.noise_p = 0.5;
        let ks: Vec<String> = [c, 2 * c, 4 * c].iter().map(|k| k.to_string()).collect();
        let k_trend = sweep_cached(&cfg, SweepAxis::K, &ks, &SEEDS, cache).map_err(|e| e.to_string());

        cfg.clusterfit.kmeans.k = 4 * c;
        let strategy = sweep_cached(
            &cfg,
            SweepAxis::Strategy,
            &strings(&["unsupervised", "per-label"]),
            &SEEDS,
            cache,
        )
        .map_err(|e| e.to_string());
        Self {
            control,
            control_secs,
            k_trend,
            strategy,
            fine_classes: c,
        }
    }

    fn control(&self) -> Outcome {
        let t = self.control.as_ref()?;
        let mean = |method: &str, p: f64| {
            t.mean_top1(|r| r.method == method && r.p == p).unwrap_or(f64::NAN)
        };
        let ps = [0.0, 0.25, 0.5, 0.75];
        let gaps: Vec<f64> = ps.iter().map(|&p| mean("cf", p) - mean("npre", p)).collect();
        let distill_gap = mean("distill", 0.75) - mean("npre", 0.75);
        let table: Vec<String> = ps
            .iter()
            .zip(&gaps)
            .map(|(p, g)| format!("p={p}: npre {:.4} cf {:.4} gap {g:+.4}", mean("npre", *p), mean("cf", *p)))
            .collect();
        let detail = format!(
            "{}; distill gap at 0.75 {distill_gap:+.4}; {:.0}s",
            table.join(", "),
            self.control_secs
        );
        let checks = [
            (gaps[3] >= 0.03, "(i) gap at p=0.75 below 3 points"),
            (gaps.windows(2).all(|w| w[1] >= w[0]), "(ii) gap decreases with p"),
            (distill_gap < gaps[3], "(iii) distillation gap not below ClusterFit's"),
            (self.control_secs < 600.0, "runtime above 10 minutes"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            None => Ok(detail),
            Some((_, why)) => Err(format!("{why}: {detail}")),
        }
    }

    fn k_trend(&self) -> Outcome {
        let t = self.k_trend.as_ref()?;
        let c = self.fine_classes;
        let means: BTreeMap<usize, f64> = [c, 2 * c, 4 * c]
            .into_iter()
            .map(|k| (k, t.mean_top1(|r| r.method == "cf" && r.k == k).unwrap_or(f64::NAN)))
            .collect();
        let vals: Vec<f64> = means.values().copied().collect();
        let detail = means
            .iter()
            .map(|(k, m)| format!("K={k}: {m:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        ensure(vals.windows(2).all(|w| w[1] >= w[0]), format!("cf fine top1 at p=0.5, {detail}"))
    }

    fn strategy(&self) -> Outcome {
        let t = self.strategy.as_ref()?;
        let unsup = t.mean_top1(|r| r.method == "cf").unwrap_or(f64::NAN);
        let per_label = t.mean_top1(|r| r.method == "cf-per-label").unwrap_or(f64::NAN);
        ensure(
            unsup >= per_label - 0.01,
            format!("unsupervised {unsup:.4} vs per-label {per_label:.4} at K=400, p=0.5"),
        )
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}
