//! Acceptance criteria 1 to 9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use mendkit::fixtures::ToyShape;
use mendkit::fracture::{fracture, FractureConfig, FractureResult};
use mendkit::gradcheck::GradcheckConfig;
use mendkit::inference::{
    infer_codes, penalty_ner, penalty_nerp, InferConfig, InferRecord, InferResult, PenaltyMode,
};
use mendkit::mesh::{write_ply, OccupancyIndex, SamplingCube, Vec3};
use mendkit::metrics::{nfre, EvalConfig, EvalReport, ShapeRow};
use mendkit::neural::checkpoint::encode_checkpoint;
use mendkit::neural::{AutodecoderModel, ModelConfig};
use mendkit::reconstruct::{
    evaluate_grid, learned_grid, reconstruct_restoration, voxel_iou, FnField, LearnedSet,
};
use mendkit::sampling::{
    build_sample_set, encode_sample_set, ground_truth_break, SampleMeta, SampleSet, SamplingConfig,
};
use mendkit::selftest::{gradient_suite, marching_suite, metrics_suite, partition_suite, tps_suite};
use mendkit::training::{Precision, Trainer, TrainConfig};
use mendkit::neural::compose_restoration;

const TOY_SHAPES: [ToyShape; 5] = [
    ToyShape::Peanut,
    ToyShape::Snowman,
    ToyShape::Dumbbell,
    ToyShape::Hammer,
    ToyShape::Pill,
];
const TOY_MESH_RESOLUTION: usize = 48;
const IOU_RESOLUTION: usize = 64;
const IOU_THRESHOLD: f64 = 0.8;
const ABLATION_FRACTURES_PER_SHAPE: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fracture_config() -> FractureConfig {
    FractureConfig {
        resolution: 64,
        target: [0.12, 0.20],
        ..Default::default()
    }
}

fn sampling_config() -> SamplingConfig {
    SamplingConfig {
        points: 50_000,
        ..Default::default()
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        p: 32,
        q: 16,
        ..Default::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        epochs: 3000,
        shapes_per_step: 1,
        points_per_shape: 1024,
        precision: Precision::F32,
        ..Default::default()
    }
}

fn overfit_infer_config() -> InferConfig {
    InferConfig {
        iterations: 400,
        restarts: 4,
        learning_rate: 2e-2,
        final_lr_fraction: 0.02,
        points_per_iteration: 2048,
        precision: Precision::F32,
        ..Default::default()
    }
}

fn ablation_infer_config(mode: PenaltyMode) -> InferConfig {
    InferConfig {
        mode,
        iterations: 200,
        restarts: 1,
        learning_rate: 2e-2,
        final_lr_fraction: 0.02,
        points_per_iteration: 1024,
        precision: Precision::F32,
        ..Default::default()
    }
}

/// One fractured toy shape with its labeled samples and ground-truth
/// restoration voxels.
struct ToyCase {
    shape: usize,
    set: SampleSet,
    meta: SampleMeta,
    gt_restoration: Vec<bool>,
    seconds: f64,
}

fn toy_case(shape: usize, index: &OccupancyIndex, fr: &FractureResult, start: Instant) -> mendkit::Result<ToyCase> {
    let scfg = sampling_config();
    let tps = ground_truth_break(index, fr, &scfg, 1)?;
    let name = format!("{}-{}", TOY_SHAPES[shape].name(), fr.seed);
    let (set, meta) = build_sample_set(&name, index, fr, &tps, scfg.counts(), &scfg, 2)?;
    let gt = evaluate_grid(
        &FnField(|p: &Vec3| (index.contains(p) && fr.removed(p)) as u8 as f64),
        &SamplingCube::unit(),
        IOU_RESOLUTION,
    )?;
    Ok(ToyCase {
        shape,
        set,
        meta,
        gt_restoration: gt.bits(0.5),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The training corpus (one fracture per shape, seed `100 + i`) and the
/// extra fractures used by the ablation, `ABLATION_FRACTURES_PER_SHAPE`
/// per shape including the training one.
fn build_cases() -> mendkit::Result<(Vec<ToyCase>, Vec<ToyCase>, usize)> {
    let (mut corpus, mut extra, mut rejected) = (Vec::new(), Vec::new(), 0);
    for (i, shape) in TOY_SHAPES.iter().enumerate() {
        let mesh = shape.mesh(TOY_MESH_RESOLUTION)?;
        let index = OccupancyIndex::new(&mesh)?;
        let t = Instant::now();
        let fr = fracture(&mesh, 100 + i as u64, &fracture_config())?;
        let case = toy_case(i, &index, &fr, t)
            .map_err(|e| mendkit::Error::InvalidArgument(format!("{} seed {}: {e}", shape.name(), fr.seed)))?;
        corpus.push(case);
        let mut seed = 1000 + 100 * i as u64;
        let mut made = 1;
        while made < ABLATION_FRACTURES_PER_SHAPE {
            seed += 1;
            if seed > 1050 + 100 * i as u64 {
                return Err(mendkit::Error::InvalidArgument(format!("no fracture in the target window for {}", shape.name())));
            }
            let t = Instant::now();
            let Ok(fr) = fracture(&mesh, seed, &fracture_config()) else { continue };
            // A set over the drop limit is rejected like a failed fracture.
            match toy_case(i, &index, &fr, t) {
                Ok(case) => extra.push(case),
                Err(mendkit::Error::DropRate { rate, .. }) => {
                    eprintln!("{} seed {seed}: drop rate {rate:.4} over the limit, next seed", shape.name());
                    rejected += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            made += 1;
        }
    }
    Ok((corpus, extra, rejected))
}

fn criterion_1() -> mendkit::Result<Outcome> {
    let r = partition_suite(1_000_000, 1, compose_restoration)?;
    Ok(outcome(r.passed(), format!("{} checks, max |F + R - C| = {:.1e}, corners exact", r.checks, r.max_error)))
}

fn criterion_2() -> mendkit::Result<Outcome> {
    let r = gradient_suite(&GradcheckConfig::default())?;
    Ok(outcome(r.passed(), format!("max rel error {:.2e} < 1e-4 over {} probes ({})", r.max_error, r.checks, r.note)))
}

fn criterion_3() -> mendkit::Result<Outcome> {
    let r = tps_suite(50, 1, 3)?;
    Ok(outcome(r.passed(), format!("max residual / side condition / side_of {:.1e} < 1e-8", r.max_error)))
}

fn criterion_4() -> mendkit::Result<Outcome> {
    let r = marching_suite(64, 128, 30_000, 4)?;
    Ok(outcome(r.passed(), format!("{}, bound 2/128 = {:.4}", r.note, 2.0 / 128.0)))
}

fn criterion_5(cases: &[&ToyCase], rejected: usize) -> Outcome {
    let mut worst_drop: f64 = 0.0;
    let mut bad_rows = 0;
    let mut slowest: f64 = 0.0;
    for c in cases {
        bad_rows += c.set.inconsistent_rows().len();
        worst_drop = worst_drop.max(c.meta.drop_rate);
        slowest = slowest.max(c.seconds);
    }
    outcome(
        bad_rows == 0 && worst_drop < 0.05 && slowest < 60.0,
        format!(
            "{} sample sets ({rejected} rejected over the drop limit), {bad_rows} inconsistent rows, max drop rate {:.2}% < 5%, slowest {slowest:.1}s",
            cases.len(),
            100.0 * worst_drop
        ),
    )
}

fn train_toy(corpus: &[ToyCase]) -> mendkit::Result<AutodecoderModel> {
    let sets: Vec<SampleSet> = corpus.iter().map(|c| c.set.clone()).collect();
    let cfg = train_config();
    let mut trainer = Trainer::new(&sets, &model_config(), &cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.model().clone())
}

fn restoration_iou(model: &AutodecoderModel, r: &InferResult, gt: &[bool]) -> mendkit::Result<f64> {
    let grid = learned_grid(model, r.z_c.view(), r.z_b.view(), LearnedSet::Restoration, &SamplingCube::unit(), IOU_RESOLUTION)?;
    voxel_iou(&grid.bits(0.5), gt)
}

fn criterion_6(model: &AutodecoderModel, corpus: &[ToyCase]) -> mendkit::Result<Outcome> {
    let mut ious = Vec::new();
    for c in corpus {
        let r = infer_codes(model, &c.set.fractured_view(), &overfit_infer_config())?;
        ious.push((TOY_SHAPES[c.shape].name(), restoration_iou(model, &r, &c.gt_restoration)?));
    }
    let good = ious.iter().filter(|(_, v)| *v >= IOU_THRESHOLD).count();
    let list: Vec<String> = ious.iter().map(|(n, v)| format!("{n} {v:.3}")).collect();
    Ok(outcome(good >= 4, format!("{good}/5 shapes with IoU >= {IOU_THRESHOLD} ({})", list.join(", "))))
}

/// Worst relative margin of `nerp - ner` over every per-iteration batch of
/// the trace and disjoint 64-bit batches of the fractured samples, with the
/// rounding allowance of the precision each was computed in.
fn jensen_margin(model: &AutodecoderModel, r: &InferResult, points: &[Vec3], trace_tol: f64) -> mendkit::Result<f64> {
    let margin = |nerp: f64, ner: f64, tol: f64| (nerp - ner) / ner.abs().max(1.0) + tol;
    let mut worst = f64::INFINITY;
    for t in &r.trace {
        worst = worst.min(margin(t.terms.nerp, t.terms.ner, trace_tol));
    }
    for chunk in points.chunks(4096) {
        let nerp = penalty_nerp(model, r.z_c.view(), r.z_b.view(), chunk)?;
        let ner = penalty_ner(model, r.z_c.view(), r.z_b.view(), chunk)?;
        worst = worst.min(margin(nerp, ner, 1e-12));
    }
    Ok(worst)
}

fn criterion_7(model: &AutodecoderModel, cases: &[&ToyCase]) -> mendkit::Result<Outcome> {
    let (mut ne_none, mut ne_both, mut jensen) = (0, 0, f64::INFINITY);
    for c in cases {
        let fv = c.set.fractured_view();
        for mode in [PenaltyMode::None, PenaltyMode::NerProx] {
            let cfg = ablation_infer_config(mode);
            let r = infer_codes(model, &fv, &cfg)?;
            let mesh = reconstruct_restoration(model, r.z_c.view(), r.z_b.view(), &SamplingCube::unit(), IOU_RESOLUTION)?;
            if !mesh.is_empty() {
                match mode {
                    PenaltyMode::None => ne_none += 1,
                    _ => ne_both += 1,
                }
            }
            let tol = if cfg.precision == Precision::F32 { 1e-5 } else { 1e-12 };
            jensen = jensen.min(jensen_margin(model, &r, &fv.points, tol)?);
        }
    }
    Ok(outcome(
        ne_both >= ne_none && jensen >= 0.0 && cases.len() >= 20,
        format!(
            "{} inputs, non-empty none {ne_none} vs ner+prox {ne_both}, nerp >= ner on every batch: {} (worst margin {jensen:.2e} incl. rounding allowance)",
            cases.len(),
            jensen >= 0.0
        ),
    ))
}

fn criterion_8() -> mendkit::Result<Outcome> {
    let r = metrics_suite(10, 1000, 8)?;
    let gt = mendkit::mesh::icosphere(Vec3::zeros(), 0.3, 2);
    let shell = mendkit::mesh::icosphere(Vec3::new(0.5, 0.0, 0.0), 0.2, 2);
    let nonfracture: Vec<Vec3> = shell.sample_surface(2000, 1)?.into_iter().map(|s| s.point).collect();
    let self_nfre = nfre(&gt, &gt, &nonfracture, 0.02, 30_000, 5)?;
    let rows: Vec<ShapeRow> = (0..10)
        .map(|i| ShapeRow {
            shape_id: format!("s{i}"),
            class: "toy".into(),
            non_empty: i != 3,
            cd: (i != 3).then_some(0.01),
            nfre: (i != 3).then_some(0.0),
            eta: 0.02,
            samples: 100,
            seed: 0,
            error: None,
        })
        .collect();
    let report = EvalReport::from_rows(rows, vec![], &EvalConfig::default())?;
    let pass = r.passed() && self_nfre == 0.0 && report.non_empty_pct == 90.0;
    Ok(outcome(
        pass,
        format!(
            "{} oracle checks, max deviation {:.1e}; NFRE(gt, gt) = {self_nfre}; NE% with 1 empty in 10 = {}",
            r.checks, r.max_error, report.non_empty_pct
        ),
    ))
}

/// Serialized artifacts of a reduced rerun of criteria 5 to 7 in 64-bit
/// precision.
fn determinism_artifacts() -> mendkit::Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    let mut sets = Vec::new();
    for (i, shape) in TOY_SHAPES.iter().take(2).enumerate() {
        let mesh = shape.mesh(32)?;
        let index = OccupancyIndex::new(&mesh)?;
        let fr = fracture(&mesh, 100 + i as u64, &FractureConfig { resolution: 48, area_samples: 20_000, ..fracture_config() })?;
        let scfg = SamplingConfig { points: 8000, ..Default::default() };
        let tps = ground_truth_break(&index, &fr, &scfg, 1)?;
        let (set, meta) = build_sample_set(shape.name(), &index, &fr, &tps, scfg.counts(), &scfg, 2)?;
        out.push(encode_sample_set(&set));
        out.push(serde_json::to_vec(&meta)?);
        sets.push(set);
    }
    let tcfg = TrainConfig {
        epochs: 20,
        shapes_per_step: 2,
        points_per_shape: 512,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&sets, &model_config(), &tcfg)?;
    for _ in 0..tcfg.epochs {
        trainer.run_epoch()?;
    }
    out.push(encode_checkpoint(&trainer.checkpoint([0; 32])));
    let model = trainer.model();
    for mode in [PenaltyMode::None, PenaltyMode::NerProx] {
        let icfg = InferConfig {
            mode,
            iterations: 30,
            restarts: 2,
            points_per_iteration: 512,
            ..Default::default()
        };
        let r = infer_codes(model, &sets[0].fractured_view(), &icfg)?;
        out.push(serde_json::to_vec(&InferRecord::new("d", &icfg, &r))?);
        let mesh = reconstruct_restoration(model, r.z_c.view(), r.z_b.view(), &SamplingCube::unit(), 32)?;
        let mut ply = Vec::new();
        write_ply(&mesh, &mut ply)?;
        out.push(ply);
    }
    Ok(out)
}

fn criterion_9() -> mendkit::Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| mendkit::Error::InvalidArgument(e.to_string()))?;
    let a = pool.install(determinism_artifacts)?;
    let b = pool.install(determinism_artifacts)?;
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x == y);
    let bytes: usize = a.iter().map(Vec::len).sum();
    Ok(outcome(same, format!("{} artifacts ({bytes} bytes) byte-identical across two runs", a.len())))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut line = |n: u32, name: &str, start: Instant, r: mendkit::Result<Outcome>| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {n} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    };

    let t = Instant::now();
    line(1, "T-norm partition identity", t, criterion_1());
    let t = Instant::now();
    line(2, "gradient correctness", t, criterion_2());
    let t = Instant::now();
    line(3, "TPS fidelity", t, criterion_3());
    let t = Instant::now();
    line(4, "Marching Cubes fidelity", t, criterion_4());

    let t = Instant::now();
    match build_cases() {
        Ok((corpus, extra, rejected)) => {
            let all: Vec<&ToyCase> = corpus.iter().chain(&extra).collect();
            line(5, "ground-truth consistency", t, Ok(criterion_5(&all, rejected)));
            let t = Instant::now();
            match train_toy(&corpus) {
                Ok(model) => {
                    line(6, "toy overfit and self-inference", t, criterion_6(&model, &corpus));
                    let t = Instant::now();
                    line(7, "penalty ablation direction", t, criterion_7(&model, &all));
                }
                Err(e) => {
                    line(6, "toy overfit and self-inference", t, Err(e));
                    line(7, "penalty ablation direction", t, Err(mendkit::Error::InvalidArgument("no trained model".into())));
                }
            }
        }
        Err(e) => {
            let msg = e.to_string();
            line(5, "ground-truth consistency", t, Err(e));
            for (n, name) in [(6, "toy overfit and self-inference"), (7, "penalty ablation direction")] {
                line(n, name, t, Err(mendkit::Error::InvalidArgument(msg.clone())));
            }
        }
    }

    let t = Instant::now();
    line(8, "metric oracles", t, criterion_8());
    let t = Instant::now();
    line(9, "determinism", t, criterion_9());

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
