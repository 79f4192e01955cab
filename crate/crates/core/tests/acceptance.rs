//! Acceptance criteria 1–11. Each test prints one `PASS`/`FAIL` line and
//! then asserts its verdict. Tests share a lock so timing-sensitive
//! criteria never run concurrently with other criteria.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use proxsearch::autodiff::{Matrix, Tape, Var};
use proxsearch::harness::{
    benchmark_timing, epoch_checkpoint_file, median, resume, run, sweep_eta, RunConfig,
    RunReport, REPORT_FILE, TRACE_FILE,
};
use proxsearch::objective::{
    search_objective, search_objective_gradient, Batch, LossKind, RegularizerSpec, Split,
};
use proxsearch::prox::{prox_c, prox_c1, prox_c2, prox_c_bruteforce};
use proxsearch::search::{
    darts_search, nasp_search, train_discrete, Algorithm, DartsOrder, RetrainConfig, SearchConfig, Searcher,
};
use proxsearch::searchspace::{
    ArchMatrix, CellTopology, MixMode, OperationKind, OperationSet, ParamKey,
    SearchSpace, SupernetState,
};
use proxsearch::tasks::{gen_blobs, gen_two_moons, TaskData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(number: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {number:>2} {name}: {detail}");
    assert!(pass, "criterion {number} ({name}) failed: {detail}");
}

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml_str(text).expect("shipped config parses")
}

const MOONS: &str = include_str!("../../../configs/moons.toml");
const SPIRALS: &str = include_str!("../../../configs/spirals.toml");
const SWEEP: &str = include_str!("../../../configs/sweep_eta.toml");
const BENCH: &str = include_str!("../../../configs/bench.toml");

fn random_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = rng.random_range(1..=16);
    (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect()
}

#[test]
fn criterion_01_prox_matches_enumeration() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let a = random_vector(&mut rng);
        if prox_c(&a).unwrap().values != prox_c_bruteforce(&a).unwrap() {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "prox oracle equivalence",
        mismatches == 0 && secs < 1.0,
        format!("{mismatches} mismatches in 10000 vectors, {secs:.3} s"),
    );
}

#[test]
fn criterion_02_composition_of_box_and_sparsity() {
    let _guard = serial();
    let start = Instant::now();
    let compose = |a: &[f64]| prox_c1(&prox_c2(a).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut in_box_bad = 0;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=16);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..=1.0)).collect();
        if compose(&a) != prox_c_bruteforce(&a).unwrap() {
            in_box_bad += 1;
        }
    }

    let (mut checked, mut bad, mut example) = (0, 0, None);
    while checked < 10_000 {
        let a = random_vector(&mut rng);
        if !a.iter().any(|&x| x > 0.0) {
            continue;
        }
        checked += 1;
        let (got, want) = (compose(&a), prox_c_bruteforce(&a).unwrap());
        if got != want {
            bad += 1;
            if example.is_none() {
                example = Some(format!("{a:.3?} -> {got:.3?}, oracle {want:.3?}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "box-then-sparsity composition",
        in_box_bad == 0 && bad == 0 && secs < 1.0,
        format!(
            "in-box mismatches {in_box_bad}/10000, random mismatches {bad}/10000, {secs:.3} s{}",
            example.map(|e| format!("; first: {e}")).unwrap_or_default()
        ),
    );
}

/// Central differences of `f` at `x`, one coordinate at a time.
fn central_difference(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// Norm-wise relative error; the denominator is floored so an identically
/// zero gradient is compared against finite-difference round-off absolutely.
fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let norm = |m: &Matrix| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(&(a - b)) / norm(a).max(norm(b)).max(1e-3)
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

/// Entries bounded away from zero so kinks stay outside the probe width.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Matrix {
    Array2::from_shape_fn(shape, |_| {
        let x: f64 = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            x
        } else {
            -x
        }
    })
}

type Primitive = fn(&mut Tape, &[Var], &mut Vec<usize>) -> Var;

/// `(name, input shapes, builder)`; builders may read labels from the vec.
fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Primitive)> {
    vec![
        ("matmul", vec![(3, 4), (4, 2)], |t, v, _| t.matmul(v[0], v[1]).unwrap()),
        ("add", vec![(3, 4), (3, 4)], |t, v, _| t.add(v[0], v[1]).unwrap()),
        ("add-broadcast", vec![(3, 4), (1, 4)], |t, v, _| t.add(v[0], v[1]).unwrap()),
        ("mul", vec![(3, 4), (3, 4)], |t, v, _| t.mul(v[0], v[1]).unwrap()),
        ("relu", vec![(3, 4)], |t, v, _| t.relu(v[0]).unwrap()),
        ("tanh", vec![(3, 4)], |t, v, _| t.tanh(v[0]).unwrap()),
        ("sigmoid", vec![(3, 4)], |t, v, _| t.sigmoid(v[0]).unwrap()),
        ("scale", vec![(3, 4), (1, 1)], |t, v, _| t.scale(v[0], v[1]).unwrap()),
        ("sum", vec![(3, 4)], |t, v, _| t.sum(v[0]).unwrap()),
        ("softmax-row", vec![(3, 4)], |t, v, _| t.softmax_row(v[0]).unwrap()),
        ("pick", vec![(3, 4)], |t, v, _| t.pick(v[0], 2, 1).unwrap()),
        ("softmax-cross-entropy", vec![(5, 3)], |t, v, labels| {
            t.softmax_cross_entropy(v[0], labels).unwrap()
        }),
        ("mean-squared-error", vec![(3, 4), (3, 4)], |t, v, _| {
            t.mean_squared_error(v[0], v[1]).unwrap()
        }),
    ]
}

/// `Σ R ⊙ prim(inputs)` for a fixed random `R`, so the whole Jacobian is probed.
fn contracted(build: Primitive, inputs: &[Matrix], weights_seed: u64, labels: &[usize]) -> (Tape, Var, Vec<Var>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let mut labels = labels.to_vec();
    let out = build(&mut tape, &vars, &mut labels);
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let r = tape.leaf(uniform(&mut rng, out.shape(), -1.0, 1.0));
    let prod = tape.mul(out, r).unwrap();
    let total = tape.sum(prod).unwrap();
    (tape, total, vars)
}

fn check_primitives(worst: &mut Vec<(String, f64)>, instances: usize) {
    for (name, shapes, build) in primitives() {
        let mut max_err: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..instances {
            let inputs: Vec<Matrix> = shapes.iter().map(|&s| away_from_zero(&mut rng, s)).collect();
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let seed = 1000 + i as u64;
            let (tape, total, vars) = contracted(build, &inputs, seed, &labels);
            let grads = tape.gradient(total, &vars).unwrap();
            for (j, grad) in grads.iter().enumerate() {
                let numeric = central_difference(
                    |x| {
                        let mut probe = inputs.clone();
                        probe[j] = x.clone();
                        let (tape, total, _) = contracted(build, &probe, seed, &labels);
                        tape.scalar_value(total)
                    },
                    &inputs[j],
                    1e-6,
                );
                max_err = max_err.max(rel_err(grad, &numeric));
            }
        }
        worst.push((name.to_string(), max_err));
    }
}

/// Bias-free ReLU operations emit exact zero rows, which puts downstream
/// ReLUs exactly on their kink where central differences are one-sided, so
/// the objective checks use the smooth operations (ReLU itself is checked as
/// a primitive away from its kink).
fn gradcheck_space() -> SearchSpace {
    let ops = [
        OperationKind::Zero,
        OperationKind::Identity,
        OperationKind::Linear,
        OperationKind::TanhLinear,
        OperationKind::SigmoidLinear,
    ];
    SearchSpace::new(CellTopology::full(3).unwrap(), OperationSet::new(&ops, 3).unwrap())
}

fn flatten(parts: &[Matrix]) -> Matrix {
    let data: Vec<f64> = parts.iter().flat_map(|m| m.iter().copied()).collect();
    Matrix::from_shape_vec((1, data.len()), data).unwrap()
}

fn gradcheck_batch(rng: &mut ChaCha8Rng) -> Batch {
    let features = uniform(rng, (6, 2), -1.5, 1.5);
    let labels = (0..6).map(|_| rng.random_range(0..3)).collect();
    Batch {
        features,
        labels,
        classes: 3,
    }
}

fn random_one_hot(rng: &mut ChaCha8Rng, edges: usize, ops: usize) -> ArchMatrix {
    let mut m = Array2::zeros((edges, ops));
    for e in 0..edges {
        m[[e, rng.random_range(0..ops)]] = rng.random_range(0.2..1.0);
    }
    ArchMatrix::from_matrix(m)
}

/// Worst relative errors of the objective gradients w.r.t. `w` and `A`.
fn check_objective(mode: MixMode, eta: f64, instances: usize) -> (f64, f64) {
    let space = gradcheck_space();
    let (edges, ops) = (space.edge_count(), space.op_count());
    let mut rng = ChaCha8Rng::seed_from_u64(4 + eta.to_bits() % 97 + mode as u64);
    let (mut worst_w, mut worst_a): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let batch = gradcheck_batch(&mut rng);
        let weights = SupernetState::init(&space, 2, 3, &mut rng);
        let reg = RegularizerSpec::new(eta, space.operations.param_counts()).unwrap();
        let arch = match mode {
            MixMode::Softmax => ArchMatrix::from_matrix(uniform(&mut rng, (edges, ops), -1.0, 1.0)),
            _ => random_one_hot(&mut rng, edges, ops),
        };
        let loss = LossKind::SoftmaxCrossEntropy;
        let (_, arch_grad, weight_grads) =
            search_objective_gradient(&space, &weights, &arch, &batch, loss, &reg, mode).unwrap();

        let (mut analytic_w, mut numeric_w) = (Vec::new(), Vec::new());
        for key in weights.keys() {
            let base = weights.get(key).unwrap().clone();
            let numeric = central_difference(
                |x| {
                    let mut w = weights.clone();
                    *w.get_mut(key).unwrap() = x.clone();
                    search_objective(&space, &w, &arch, &batch, loss, &reg, mode).unwrap()
                },
                &base,
                1e-6,
            );
            let analytic = weight_grads
                .get(&key)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(base.dim()));
            if let ParamKey::Op { edge, op, .. } = key {
                if mode != MixMode::Softmax && arch.matrix()[[edge, op]] == 0.0 {
                    assert!(analytic.iter().all(|&g| g == 0.0), "unselected op received gradient");
                }
            }
            analytic_w.push(analytic);
            numeric_w.push(numeric);
        }
        worst_w = worst_w.max(rel_err(&flatten(&analytic_w), &flatten(&numeric_w)));

        let numeric_arch = match mode {
            MixMode::Softmax => central_difference(
                |a| {
                    let a = ArchMatrix::from_matrix(a.clone());
                    search_objective(&space, &weights, &a, &batch, loss, &reg, mode).unwrap()
                },
                arch.matrix(),
                1e-6,
            ),
            // The probed gradient is the derivative of the linearly mixed
            // objective at the discrete point.
            MixMode::Probed | MixMode::Linear => central_difference(
                |a| {
                    let a = ArchMatrix::from_matrix(a.clone());
                    search_objective(&space, &weights, &a, &batch, loss, &reg, MixMode::Linear).unwrap()
                },
                arch.matrix(),
                1e-6,
            ),
            // Only the selected coefficient may move in discrete mode.
            MixMode::Discrete => {
                let mut g = Array2::zeros((edges, ops));
                for e in 0..edges {
                    let k = arch.argmax_ops()[e];
                    let h = 1e-6;
                    let at = |c: f64| {
                        let mut m = arch.matrix().clone();
                        m[[e, k]] = c;
                        let a = ArchMatrix::from_matrix(m);
                        search_objective(&space, &weights, &a, &batch, loss, &reg, mode).unwrap()
                    };
                    let c = arch.matrix()[[e, k]];
                    g[[e, k]] = (at(c + h) - at(c - h)) / (2.0 * h);
                }
                g
            }
        };
        worst_a = worst_a.max(rel_err(&arch_grad, &numeric_arch));
    }
    (worst_w, worst_a)
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let _guard = serial();
    let start = Instant::now();
    let instances = 100;
    let mut rows = Vec::new();
    check_primitives(&mut rows, instances);
    for mode in [MixMode::Softmax, MixMode::Discrete, MixMode::Probed] {
        for eta in [0.0, 0.5] {
            let (w, a) = check_objective(mode, eta, instances);
            rows.push((format!("{mode:?}/eta={eta}/w"), w));
            rows.push((format!("{mode:?}/eta={eta}/A"), a));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (name, worst) = rows
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let failing: Vec<&str> = rows.iter().filter(|r| !(r.1 <= 1e-5)).map(|r| r.0.as_str()).collect();
    verdict(
        3,
        "gradient correctness",
        failing.is_empty() && secs < 30.0,
        format!(
            "{} checks x {instances} instances, worst relative error {worst:.2e} ({name}), failing {failing:?}, {secs:.1} s",
            rows.len()
        ),
    );
}

fn built(config: &RunConfig) -> (TaskData, SearchSpace) {
    (config.task.build().unwrap(), config.space.build().unwrap())
}

#[test]
fn criterion_04_feasibility_and_lazy_box_violation() {
    let _guard = serial();
    let config = config(MOONS);
    let (task, space) = built(&config);
    let nasp = SearchConfig {
        algorithm: Algorithm::Nasp,
        ..config.search_config()
    };
    let mut searcher = Searcher::new(nasp.clone(), &space, &task).unwrap();
    let mut violations = Vec::new();
    while !searcher.is_done() {
        let r = searcher.step().unwrap();
        let box_ok = r.arch.iter().all(|&x| (0.0..=1.0).contains(&x));
        let one_hot_ok = r.discrete.outer_iter().all(|row| {
            let nz: Vec<f64> = row.iter().copied().filter(|&x| x != 0.0).collect();
            nz.len() == 1 && nz[0] > 0.0 && nz[0] <= 1.0
        });
        if !(box_ok && one_hot_ok) {
            violations.push(r.epoch);
        }
    }
    let epochs = searcher.state().epoch;
    let lazy = Searcher::new(
        SearchConfig {
            algorithm: Algorithm::PaLazy,
            ..nasp
        },
        &space,
        &task,
    )
    .unwrap()
    .run()
    .unwrap();
    let flagged = lazy.trace.first_box_violation;
    verdict(
        4,
        "feasibility invariants",
        epochs == 50 && violations.is_empty() && flagged.is_some(),
        format!(
            "NASP {epochs} epochs with violations at {violations:?}; PA-lazy first box violation {flagged:?}"
        ),
    );
}

/// Best architecture by validation loss after training every candidate from
/// the same initialization for the same number of steps as the search.
fn exhaustive_best(space: &SearchSpace, task: &TaskData, search: &SearchConfig) -> (Vec<usize>, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let init = SupernetState::init(space, task.in_dim(), task.classes, &mut rng);
    let retrain = RetrainConfig::from_search(search);
    let reg = RegularizerSpec::new(0.0, space.operations.param_counts()).unwrap();
    let k = space.op_count();
    let mut scored = Vec::new();
    for index in 0..k.pow(space.edge_count() as u32) {
        let ops: Vec<usize> = (0..space.edge_count())
            .map(|e| (index / k.pow((space.edge_count() - 1 - e) as u32)) % k)
            .collect();
        let arch = ArchMatrix::one_hot(&ops, k);
        let trained = train_discrete(space, &arch, init.clone(), &task.batch(Split::Train), &retrain).unwrap();
        let val = search_objective(
            space,
            &trained.weights,
            &arch,
            &task.batch(Split::Val),
            search.loss,
            &reg,
            MixMode::Discrete,
        )
        .unwrap();
        scored.push((val, ops));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    (scored[0].1.clone(), scored[0].0, scored[1].0)
}

fn tiny_space() -> SearchSpace {
    SearchSpace::new(
        CellTopology::chain(3).unwrap(),
        OperationSet::new(
            &[OperationKind::Zero, OperationKind::Linear, OperationKind::TanhLinear],
            4,
        )
        .unwrap(),
    )
}

#[test]
fn criterion_05_exhaustive_oracle_agreement() {
    let _guard = serial();
    let start = Instant::now();
    let space = tiny_space();
    assert_eq!(space.architecture_count(), 9);
    let search = SearchConfig {
        algorithm: Algorithm::Nasp,
        epochs: 100,
        arch_lr: 0.02,
        ..SearchConfig::default()
    };
    let mut lines = Vec::new();
    let mut all_pass = true;
    for task_name in ["blobs", "two-moons"] {
        let mut hits = 0;
        let mut misses = Vec::new();
        for seed in 0..10 {
            let task = match task_name {
                "blobs" => gen_blobs(120, 3, 0.5, seed),
                _ => gen_two_moons(120, 0.1, seed),
            }
            .unwrap()
            .standardized();
            let cfg = SearchConfig { seed, ..search.clone() };
            let (best, best_loss, runner_up) = exhaustive_best(&space, &task, &cfg);
            let found = nasp_search(&cfg, &space, &task).unwrap().selected;
            if found == best {
                hits += 1;
            } else {
                misses.push(format!("seed {seed}: {found:?} vs {best:?} (gap to runner-up {:.1e})", runner_up - best_loss));
            }
        }
        all_pass &= hits >= 8;
        lines.push(format!("{task_name} {hits}/10 [{}]", misses.join("; ")));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        "exhaustive-oracle agreement",
        all_pass && secs < 300.0,
        format!("{}; {secs:.1} s", lines.join(" | ")),
    );
}

fn with_seed(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.task.seed = seed;
    c.algorithm.seed = seed;
    c
}

#[test]
fn criterion_06_discrete_architecture_is_more_stable() {
    let _guard = serial();
    let start = Instant::now();
    let base = config(MOONS);
    let (mut nasp, mut darts) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let cfg = with_seed(&base, seed);
        let (task, space) = built(&cfg);
        let search = cfg.search_config();
        nasp.push(nasp_search(&search, &space, &task).unwrap().trace.total_switches() as f64);
        darts.push(
            darts_search(&search, &space, &task, DartsOrder::First)
                .unwrap()
                .trace
                .total_switches() as f64,
        );
    }
    let (n, d) = (median(&nasp), median(&darts));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        6,
        "stability direction",
        n <= d && secs < 600.0,
        format!("median switches NASP {n} vs DARTS {d} (NASP {nasp:?}, DARTS {darts:?}); {secs:.1} s"),
    );
}

#[test]
fn criterion_07_phase_time_direction() {
    let _guard = serial();
    let start = Instant::now();
    let config = config(BENCH);
    assert_eq!(config.space.operations.len(), 7);
    let rows = benchmark_timing(&config).unwrap();
    let row = |a: Algorithm| rows.iter().find(|r| r.algorithm == a).expect("benchmarked").clone();
    let (nasp, first, second) = (
        row(Algorithm::Nasp),
        row(Algorithm::DartsFirstOrder),
        row(Algorithm::DartsSecondOrder),
    );
    let weight_ratio = nasp.weight_update / first.weight_update;
    let arch_ratio = second.arch_update / first.arch_update;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        "efficiency direction",
        weight_ratio <= 0.67 && arch_ratio >= 1.5 && secs < 300.0,
        format!(
            "NASP/DARTS-1 weight update {weight_ratio:.3} (≤ 0.67), DARTS-2/DARTS-1 A update {arch_ratio:.2} (≥ 1.5); {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_08_regularizer_shrinks_models() {
    let _guard = serial();
    let start = Instant::now();
    let config = config(SWEEP);
    let etas = [0.0, 0.1, 1.0, 10.0];
    let rows = sweep_eta(&config, &etas).unwrap();
    let medians: Vec<f64> = rows.iter().map(|r| r.median_param_count).collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        8,
        "regularizer direction",
        rows.iter().all(|r| r.runs == 5) && monotone && secs < 600.0,
        format!("median cell parameters over eta {etas:?}: {medians:?}; {secs:.1} s"),
    );
}

#[test]
fn criterion_09_proximal_variants_ordering() {
    let _guard = serial();
    let start = Instant::now();
    let base = config(SPIRALS);
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    let algorithms = [Algorithm::PaStandard, Algorithm::PaLazy, Algorithm::Nasp];
    for seed in 0..10 {
        let cfg = with_seed(&base, seed);
        let (task, space) = built(&cfg);
        for (i, &algorithm) in algorithms.iter().enumerate() {
            let search = SearchConfig {
                algorithm,
                ..cfg.search_config()
            };
            acc[i].push(Searcher::new(search, &space, &task).unwrap().run().unwrap().val_accuracy);
        }
    }
    let [standard, lazy, nasp] = acc.map(|v| median(&v));
    let tolerance = 0.02;
    let ordered = standard <= lazy + tolerance && lazy <= nasp + tolerance;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        9,
        "PA ablation direction",
        ordered,
        format!(
            "median val accuracy PA-standard {standard:.4}, PA-lazy {lazy:.4}, NASP {nasp:.4}; {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_10_completeness() {
    let _guard = serial();
    let config = config(MOONS);
    let (task, space) = built(&config);
    let search = config.search_config();
    let nasp = nasp_search(&search, &space, &task).unwrap();
    let projected = nasp.arch.map_rows(prox_c1).unwrap();
    let bits = |m: &ArchMatrix| m.matrix().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical = bits(&nasp.architecture) == bits(&projected);

    let darts = darts_search(&search, &space, &task, DartsOrder::First).unwrap();
    let gaps: Vec<f64> = darts.trace.records.iter().filter_map(|r| r.discretization_gap).collect();
    let final_gap = *gaps.last().expect("relaxed trace records a gap");
    let recorded = gaps.len() == darts.trace.records.len();
    verdict(
        10,
        "completeness",
        identical && recorded && final_gap >= 0.0,
        format!(
            "NASP architecture bit-identical to Prox_C1(A): {identical}; DARTS final discretization gap {final_gap:.4} (recorded every epoch: {recorded})"
        ),
    );
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn criterion_11_reproducibility() {
    let _guard = serial();
    let tmp = tempfile::tempdir().unwrap();
    let mut variants = Vec::new();
    let mut base = config(MOONS);
    base.output.checkpoint_every = 20;
    variants.push(("nasp", base.clone()));
    let mut darts = base.clone();
    darts.algorithm.name = Algorithm::DartsSecondOrder;
    darts.algorithm.batch_size = Some(32);
    variants.push(("darts-second-order", darts));
    let mut lazy = with_seed(&base, 7);
    lazy.algorithm.name = Algorithm::PaLazy;
    variants.push(("pa-lazy", lazy));

    let mut failures = Vec::new();
    for (name, mut cfg) in variants {
        let dir = tmp.path().join(name);
        cfg.output.dir = dir.join("a");
        let first = run(&cfg).unwrap();
        let trace_a = read(&cfg.output.dir, TRACE_FILE);
        let json_a = read(&cfg.output.dir, REPORT_FILE);
        cfg.output.dir = dir.join("b");
        let second = run(&cfg).unwrap();
        let mut expected = first.clone();
        expected.config.output.dir = cfg.output.dir.clone();
        if second != expected || trace_a != read(&cfg.output.dir, TRACE_FILE) {
            failures.push(format!("{name}: rerun differs"));
        }
        if json_a.replace("/a\"", "/b\"") != read(&cfg.output.dir, REPORT_FILE) {
            failures.push(format!("{name}: report text differs"));
        }

        let ckpt = dir.join("a").join(epoch_checkpoint_file(20));
        let resumed = resume(&ckpt, Some(dir.join("c"))).unwrap();
        expected.config.output.dir = dir.join("c");
        if resumed != expected || trace_a != read(&dir.join("c"), TRACE_FILE) {
            failures.push(format!("{name}: resume from epoch 20 differs"));
        }
        let reloaded = RunReport::load(dir.join("c").join(REPORT_FILE)).unwrap();
        if reloaded != resumed {
            failures.push(format!("{name}: report does not round-trip"));
        }
    }
    verdict(
        11,
        "reproducibility",
        failures.is_empty(),
        format!("3 configurations rerun and resumed; differences: {failures:?}"),
    );
}
