use nalgebra::Point3;
use proptest::prelude::*;
use texseg::features::{load_features, write_features, FeatureVector};
use texseg::labels::{parse_labels, read_labels, write_labels, LabelError, LabelState};
use texseg::mesh::{load_mesh, parse_ply, primitives, write_obj, write_ply, Mesh, MeshFormat};
use texseg::tensor::checkpoint::{load_checkpoint, save_checkpoint};
use texseg::tensor::ParamSet;

fn mesh_from(coords: &[(f64, f64, f64)]) -> Mesh {
    // a fan around vertex 0 over a polygon of the remaining vertices
    let vertices: Vec<Point3<f64>> = coords.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
    let facets = (1..vertices.len() - 1).map(|i| [0, i, i + 1]).collect();
    Mesh::new(vertices, facets).unwrap()
}

fn coords() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 3..40).prop_filter("finite", |v| {
        v.iter().all(|(x, y, z)| x.is_finite() && y.is_finite() && z.is_finite())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn obj_roundtrip_is_exact(c in coords()) {
        let mesh = mesh_from(&c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        write_obj(&mesh, &p).unwrap();
        prop_assert_eq!(load_mesh(&p, MeshFormat::Auto).unwrap(), mesh);
    }

    #[test]
    fn ply_roundtrip_is_exact(c in coords()) {
        let mesh = mesh_from(&c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        write_ply(&mesh, &p).unwrap();
        prop_assert_eq!(parse_ply(&std::fs::read(&p).unwrap()).unwrap(), mesh);
    }

    #[test]
    fn label_csv_roundtrip(labels in prop::collection::vec(-1i8..=1, 0..500)) {
        let state = LabelState::from_labels(labels);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels(&state, &p).unwrap();
        let back = read_labels(&p).unwrap();
        prop_assert_eq!(back.labels(), state.labels());
    }

    #[test]
    fn feature_roundtrip(rows in prop::collection::vec((0usize..100_000, prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 8)), 1..30)) {
        let feats: Vec<FeatureVector> = rows.into_iter().map(|(center, values)| FeatureVector { center, values }).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features(&feats, &p).unwrap();
        let back = load_features(&p).unwrap();
        prop_assert_eq!(back.len(), feats.len());
        for (a, b) in back.iter().zip(&feats) {
            prop_assert_eq!(a.center, b.center);
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn big_label_file_roundtrip() {
    let mut r = texseg::rng::stream(1, "labels");
    let labels: Vec<i8> = (0..10_000).map(|_| rand::Rng::random_range(&mut r, -1..=1)).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("l.csv");
    write_labels(&LabelState::from_labels(labels.clone()), &p).unwrap();
    assert_eq!(read_labels(&p).unwrap().labels(), &labels[..]);
}

#[test]
fn bad_label_line_is_reported_with_its_number() {
    match parse_labels("0,1\n1,0\n2,2\n") {
        Err(LabelError::MalformedLine { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(parse_labels("").unwrap().is_empty());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let mut r = texseg::rng::stream(2, "ckpt");
    let mut p = ParamSet::<f32>::new();
    p.normal("a.w", &[7, 5], 1.0, &mut r);
    p.normal("a.b", &[5], 1.0, &mut r);
    p.normal("scalar", &[1], 3.0, &mut r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let back = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back.names(), p.names());
    for (a, b) in back.tensors().iter().zip(p.tensors()) {
        assert_eq!(a.shape(), b.shape());
        let bits = |t: &texseg::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(std::fs::read(&path).unwrap(), texseg::tensor::checkpoint::encode_checkpoint(&back));
}

#[test]
fn synthetic_mesh_roundtrips_through_both_formats() {
    let (mesh, _) = texseg::eval::synth_textured_mesh(&Default::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["s.obj", "s.ply"] {
        let p = dir.path().join(name);
        if name.ends_with("obj") {
            write_obj(&mesh, &p).unwrap();
        } else {
            write_ply(&mesh, &p).unwrap();
        }
        assert_eq!(load_mesh(&p, MeshFormat::Auto).unwrap(), mesh);
    }
    let grid = primitives::grid(5, 0.1);
    let p = dir.path().join("g.obj");
    write_obj(&grid, &p).unwrap();
    assert_eq!(load_mesh(&p, MeshFormat::Obj).unwrap(), grid);
}
