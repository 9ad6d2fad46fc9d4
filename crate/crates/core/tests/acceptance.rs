//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use texseg::eval::{self, BaselineMethod, SynthSpec};
use texseg::features::{load_features, write_features, FeatureVector};
use texseg::labels::{read_labels, write_labels, LabelState};
use texseg::mesh::{load_mesh, primitives, write_obj, write_ply, Adjacency, MeshFormat};
use texseg::models::{assign_initial_labels, clean_labels, gradient_suite, CleanPhase};
use texseg::patch::{compute_descriptor, DescriptorKind};
use texseg::pipeline::{mesh_features, segment_features, SegmentConfig};
use texseg::rng;
use texseg::tensor::checkpoint::{load_checkpoint, save_checkpoint};
use texseg::tensor::ParamSet;
use texseg::trainer::{self, TrainOutcome, VARIANTS};

type Check = Result<String, String>;

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let t = start.elapsed();
    if t < limit {
        Ok(t.as_secs_f64())
    } else {
        Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let entries = gradient_suite(100, 0).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for e in &entries {
        if !(e.max_rel_error < 1e-4) || e.coordinates < 100 {
            return Err(format!("{}: max rel error {:.3e} over {} coordinates", e.name, e.max_rel_error, e.coordinates));
        }
        parts.push(format!("{} {:.1e} ({} coords)", e.name, e.max_rel_error, e.coordinates));
    }
    let t = within(Duration::from_secs(60), start)?;
    Ok(format!("{} in {t:.1}s", parts.join(", ")))
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(7, "metric-oracle");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pred: Vec<i8> = (0..1000).map(|_| r.random_range(-1..=1)).collect();
        let truth: Vec<i8> = (0..1000).map(|_| r.random_range(-1..=1)).collect();
        let c = eval::confusion(&LabelState::from_labels(pred.clone()), &LabelState::from_labels(truth.clone()))
            .map_err(|e| e.to_string())?;
        let m = eval::metrics(c);
        let (oc, om) = brute_metrics(&pred, &truth);
        if c != oc {
            return Err(format!("confusion {c:?} vs oracle {oc:?}"));
        }
        for (a, b) in [(m.precision, om.precision), (m.recall, om.recall), (m.f1, om.f1), (m.miou, om.miou)] {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max deviation {worst:.3e}"));
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!("max deviation {worst:.1e} in {t:.2}s"))
}

fn label_rules() -> Check {
    let ok = |c: bool, what: &str| if c { Ok(()) } else { Err(what.to_string()) };
    let e = |x: Result<Vec<u8>, _>| x.map_err(|e: texseg::models::ModelError| e.to_string());
    ok(e(assign_initial_labels(&[1.0, 2.0, 3.0]))? == [0, 1, 1], "errors [1,2,3]")?;
    ok(e(assign_initial_labels(&[0.7; 5]))? == [1; 5], "equal errors")?;
    ok(e(clean_labels(&[0.2, 0.6, 0.7], CleanPhase::Later, 0.5))? == [0, 1, 1], "scores [0.2,0.6,0.7]")?;
    ok(e(clean_labels(&[0.4; 4], CleanPhase::Later, 0.5))? == [1; 4], "equal scores")?;
    ok(e(clean_labels(&[0.9], CleanPhase::FirstEpoch { prior: &[0] }, 0.5))? == [1], "gate 0.9 over prior 0")?;

    // dyadic values keep every shifted sum exactly representable
    let mut r = rng::stream(3, "label-rules");
    for _ in 0..500 {
        let n = r.random_range(1..200);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-4096i64..4096) as f64 / 1024.0).collect();
        let c = r.random_range(-65536i64..65536) as f64 / 1024.0;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let p: Vec<f64> = x.iter().map(|v| (v + 4.0) / 16.0).collect();
        let p_shifted: Vec<f64> = p.iter().map(|v| v + 0.125).collect();
        ok(e(assign_initial_labels(&x))? == e(assign_initial_labels(&shifted))?, "error shift changed labels")?;
        ok(
            e(clean_labels(&p, CleanPhase::Later, 0.5))? == e(clean_labels(&p_shifted, CleanPhase::Later, 0.5))?,
            "score shift changed labels",
        )?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let (l, lp) = (e(assign_initial_labels(&x))?, e(assign_initial_labels(&xp))?);
        ok(perm.iter().enumerate().all(|(j, &i)| lp[j] == l[i]), "error permutation")?;
        let (l, lp) = (e(clean_labels(&p, CleanPhase::Later, 0.5))?, e(clean_labels(&pp, CleanPhase::Later, 0.5))?);
        ok(perm.iter().enumerate().all(|(j, &i)| lp[j] == l[i]), "score permutation")?;
    }
    Ok("hand examples, 500 shift and permutation trials".into())
}

fn geometry() -> Check {
    let start = Instant::now();
    // a tilted, shifted plane; every facet with full support
    let mut r = rng::stream(4, "plane");
    let plane = primitives::grid(16, 0.3).map_vertices(random_rigid(&mut r));
    let adj = Adjacency::build(&plane).map_err(|e| e.to_string())?;
    let mut worst_plane = 0.0f64;
    for f in (3..12).flat_map(|i| (3..12).flat_map(move |j| [0, 1].map(|k| primitives::grid_facet(16, i, j, k)))) {
        let nb = support(&plane, &adj, f, 2);
        for kind in [DescriptorKind::LocalDepth, DescriptorKind::SurfaceVariation, DescriptorKind::MeanCurvature] {
            let v = compute_descriptor(&plane, f, &nb, kind).map_err(|e| e.to_string())?;
            if !(v.abs() <= 1e-9) {
                return Err(format!("plane {kind} = {v:e} at facet {f}"));
            }
            worst_plane = worst_plane.max(v.abs());
        }
    }
    let sphere = primitives::icosphere(5, 2.0);
    let adj = Adjacency::build(&sphere).map_err(|e| e.to_string())?;
    let mut worst_cur = 0.0f64;
    for f in (0..sphere.facet_count()).step_by(997) {
        let nb = support(&sphere, &adj, f, 3);
        let cur = compute_descriptor(&sphere, f, &nb, DescriptorKind::MeanCurvature).map_err(|e| e.to_string())?;
        worst_cur = worst_cur.max((cur - 0.5).abs() / 0.5);
    }
    if worst_cur >= 0.05 {
        return Err(format!("sphere curvature off by {:.1}%", worst_cur * 100.0));
    }
    let bumpy = bumpy_grid(30);
    let facets: Vec<usize> = (0..40).map(|i| primitives::grid_facet(30, 5 + i % 20, 5 + i / 2, i % 2)).collect();
    let mut r = rng::stream(5, "rigid");
    let mut worst_rigid = 0.0f64;
    for _ in 0..3 {
        worst_rigid = worst_rigid.max(invariance_error(&bumpy, &facets, random_rigid(&mut r)));
    }
    if worst_rigid >= 1e-6 {
        return Err(format!("rigid motion changed descriptors by {worst_rigid:.2e}"));
    }
    let ico = primitives::icosphere(3, 1.0);
    let n_ico = check_orf(&ico, 5, 0..ico.facet_count())?;
    let grid = primitives::grid(24, 1.0);
    let n_grid = check_orf(&grid, 4, 0..grid.facet_count())?;
    if n_ico != ico.facet_count() || n_grid == 0 {
        return Err(format!("only {n_ico} icosphere / {n_grid} grid facets had complete rings"));
    }
    let t = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "plane max |LD,SV,Cur| {worst_plane:.1e}, sphere Cur within {:.2}%, rigid {worst_rigid:.1e}, ORF ok on {n_ico}+{n_grid} facets, {t:.1}s",
        worst_cur * 100.0
    ))
}

struct Benchmark {
    features: Vec<FeatureVector>,
    truth: LabelState,
    facets: usize,
    config: SegmentConfig,
    /// Mesh loading, patch and feature extraction time.
    prep_seconds: f64,
}

fn benchmark() -> Result<Benchmark, String> {
    let start = Instant::now();
    let (mesh, truth) = eval::synth_textured_mesh(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let mut config = SegmentConfig::default();
    config.train.max_epochs = 50;
    let (features, _) = mesh_features(&mesh, &config).map_err(|e| e.to_string())?;
    Ok(Benchmark {
        features,
        truth,
        facets: mesh.facet_count(),
        config,
        prep_seconds: start.elapsed().as_secs_f64(),
    })
}

fn f1(b: &Benchmark, o: &TrainOutcome) -> Result<f64, String> {
    eval::evaluate(&o.label_state(b.facets), &b.truth)
        .map(|m| m.f1)
        .map_err(|e| e.to_string())
}

/// Mean error per class and the misclassification rate of the batch-mean
/// threshold rule applied to all patches at once.
fn separation(b: &Benchmark, errors: &[f64]) -> (f64, f64, f64) {
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let (mut st, mut nt, mut ss, mut ns, mut wrong) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (f, &e) in b.features.iter().zip(errors) {
        let tex = b.truth.get(f.center) == 1;
        if tex {
            st += e;
            nt += 1.0;
        } else {
            ss += e;
            ns += 1.0;
        }
        if (e >= mean) != tex {
            wrong += 1;
        }
    }
    (st / nt, ss / ns, wrong as f64 / errors.len() as f64)
}

fn error_separation(b: &Benchmark, full: &TrainOutcome) -> Check {
    let (first, last) = match (full.error_history.first(), full.error_history.last()) {
        (Some(a), Some(z)) => (a, z),
        _ => return Err("no reconstruction errors recorded".into()),
    };
    let (_, _, mis_first) = separation(b, first);
    let (tex, smooth, mis_last) = separation(b, last);
    let detail = format!(
        "final mean error texture {tex:.3} vs smooth {smooth:.3}, misclassification {mis_first:.3} -> {mis_last:.3}"
    );
    if tex > smooth && mis_last < mis_first {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_variant(b: &Benchmark, name: &str, track: bool) -> Result<(TrainOutcome, f64), String> {
    let mut train = trainer::variant_config(name, &b.config.train).map_err(|e| e.to_string())?;
    train.track_errors = track;
    let cfg = SegmentConfig { train, ..b.config.clone() };
    let start = Instant::now();
    let seg = segment_features(&b.features, b.facets, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    Ok((seg.outcome, start.elapsed().as_secs_f64()))
}

fn end_to_end(b: &Benchmark, full: &TrainOutcome, full_f1: f64, seconds: f64) -> Check {
    let km = eval::baseline_segment(&b.features, b.facets, BaselineMethod::KMeans2, 0).map_err(|e| e.to_string())?;
    let (km, _) = eval::align_to_truth(&km, &b.truth).map_err(|e| e.to_string())?;
    let km_f1 = eval::evaluate(&km, &b.truth).map_err(|e| e.to_string())?.f1;
    let detail = format!(
        "F1 {full_f1:.3} vs kmeans2 {km_f1:.3}, {} epochs, {seconds:.0}s",
        full.records.len()
    );
    if full_f1 >= 0.85 && full_f1 >= km_f1 + 0.05 && seconds < 600.0 && full.records.len() <= 50 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation(b: &Benchmark, full_f1: f64) -> Check {
    let mut parts = vec![format!("full {full_f1:.3}")];
    let mut failed = false;
    for v in VARIANTS.iter().filter(|&&v| v != "full") {
        let (o, _) = run_variant(b, v, false)?;
        let f = f1(b, &o)?;
        failed |= full_f1 < f - 0.02;
        parts.push(format!("{v} {f:.3}"));
    }
    if failed {
        Err(parts.join(", "))
    } else {
        Ok(parts.join(", "))
    }
}

fn texseg(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_texseg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n).display().to_string();
    texseg(&["synth", "--side", "48", "--out", &p("m.obj"), "--gt", &p("gt.csv")])?;
    let flags = ["--grid", "12", "--max-epochs", "4", "-q"];
    let run = |tag: &str, seed: &str| {
        texseg(
            &[
                &["segment", &p("m.obj"), "--out", &p(&format!("{tag}.csv")), "--ply", &p(&format!("{tag}.ply"))][..],
                &flags,
                &["--seed", seed],
            ]
            .concat(),
        )
    };
    run("a", "0")?;
    run("b", "0")?;
    let read = |n: &str| std::fs::read(p(n)).map_err(|e| e.to_string());
    if read("a.csv")? != read("b.csv")? || read("a.ply")? != read("b.ply")? {
        return Err("identical runs produced different outputs".into());
    }
    for seed in ["1", "2", "12345678901234"] {
        run(&format!("s{seed}"), seed)?;
    }
    Ok("identical CSV and PLY bytes; three other seeds ran cleanly".into())
}

fn roundtrips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n);
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let mesh = bumpy_grid(20);
    write_obj(&mesh, p("m.obj")).map_err(|e| s(&e))?;
    write_ply(&mesh, p("m.ply")).map_err(|e| s(&e))?;
    if load_mesh(p("m.obj"), MeshFormat::Auto).map_err(|e| s(&e))? != mesh
        || load_mesh(p("m.ply"), MeshFormat::Auto).map_err(|e| s(&e))? != mesh
    {
        return Err("mesh roundtrip".into());
    }
    let mut r = rng::stream(9, "roundtrip");
    let labels = LabelState::from_labels((0..5000).map(|_| r.random_range(-1..=1)).collect());
    write_labels(&labels, p("l.csv")).map_err(|e| s(&e))?;
    if read_labels(p("l.csv")).map_err(|e| s(&e))?.labels() != labels.labels() {
        return Err("label CSV roundtrip".into());
    }
    let feats: Vec<FeatureVector> = (0..50)
        .map(|i| FeatureVector {
            center: i * 7,
            values: (0..16).map(|_| r.random_range(-1e6f32..1e6)).collect(),
        })
        .collect();
    write_features(&feats, p("f.bin")).map_err(|e| s(&e))?;
    let back = load_features(p("f.bin")).map_err(|e| s(&e))?;
    if back != feats {
        return Err("feature file roundtrip".into());
    }
    let mut params = ParamSet::<f32>::new();
    params.normal("w", &[9, 4], 1.0, &mut r);
    params.normal("b", &[4], 1.0, &mut r);
    save_checkpoint(&params, p("c.ckpt")).map_err(|e| s(&e))?;
    let back = load_checkpoint::<f32>(p("c.ckpt")).map_err(|e| s(&e))?;
    let bits = |t: &texseg::tensor::Tensor<f32>| (t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    if back.names() != params.names() || back.tensors().iter().map(bits).ne(params.tensors().iter().map(bits)) {
        return Err("checkpoint roundtrip".into());
    }
    Ok("OBJ, PLY, CSV, feature file and checkpoint exact".into())
}

fn report(n: usize, name: &str, r: &Check) -> bool {
    match r {
        Ok(d) => println!("criterion {n} PASS {name}: {d}"),
        Err(d) => println!("criterion {n} FAIL {name}: {d}"),
    }
    r.is_ok()
}

fn main() {
    let mut all = true;
    all &= report(1, "gradient checks", &gradients());
    all &= report(2, "metric oracle", &metric_oracle());
    all &= report(3, "label rules", &label_rules());
    all &= report(4, "geometry", &geometry());

    let bench = benchmark();
    let full = bench.as_ref().map_err(Clone::clone).and_then(|b| {
        let start = Instant::now();
        let (o, _) = run_variant(b, "full", true)?;
        let f = f1(b, &o)?;
        Ok((o, f, b.prep_seconds + start.elapsed().as_secs_f64()))
    });
    match (&bench, &full) {
        (Ok(b), Ok((o, f, secs))) => {
            all &= report(5, "reconstruction-error separation", &error_separation(b, o));
            all &= report(6, "end-to-end benchmark", &end_to_end(b, o, *f, *secs));
            all &= report(7, "ablation ordering", &ablation(b, *f));
        }
        (_, Err(e)) => {
            for (n, name) in [(5, "reconstruction-error separation"), (6, "end-to-end benchmark"), (7, "ablation ordering")] {
                all &= report(n, name, &Err(e.clone()));
            }
        }
        _ => unreachable!(),
    }
    all &= report(8, "determinism", &determinism());
    all &= report(9, "format roundtrips", &roundtrips());
    if !all {
        std::process::exit(1);
    }
}
