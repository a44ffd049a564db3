use proptest::prelude::*;
use rwcap_core::dataset::{DatasetFile, DatasetHeader, DatasetRecord};
use rwcap_core::dielectric::VoxelGrid;
use rwcap_core::fdm::{kernel_set, FdmOptions};
use rwcap_core::frw::{quantize, EstimatorAccumulator};
use rwcap_core::geometry::{Layout, Point3, SignedAxis};
use rwcap_core::nn::ModelBundle;
use rwcap_core::symmetry::Symmetry;

fn symmetry() -> impl Strategy<Value = Symmetry> {
    (0..48usize).prop_map(|i| Symmetry::all()[i])
}

fn grid(n: usize) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(0.05f64..1.0, n * n * n).prop_map(move |v| VoxelGrid::from_raw(n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetry_actions_compose(a in symmetry(), b in symmetry(), v in prop::collection::vec(-1.0f64..1.0, 125)) {
        let seq = b.apply_cells(&a.apply_cells(&v, 5), 5);
        prop_assert_eq!(a.then(&b).apply_cells(&v, 5), seq);
        prop_assert_eq!(a.inverse().apply_cells(&a.apply_cells(&v, 5), 5), v);
    }

    #[test]
    fn face_actions_invert(a in symmetry(), v in prop::collection::vec(-1.0f64..1.0, 150)) {
        prop_assert_eq!(a.inverse().apply_faces(&a.apply_faces(&v, 5), 5), v);
    }

    #[test]
    fn fold_lands_in_window_and_is_idempotent(x in -100.0f64..100.0, y in -100.0f64..100.0, z in -100.0f64..100.0) {
        let layout = Layout::parse("window 0 0 0 3 4 5\ndiel_bg 1\ncond 1 1 1 1 2 2 2\n").unwrap();
        let p = layout.fold(Point3::new(x, y, z));
        prop_assert!(layout.window.contains(p));
        prop_assert_eq!(layout.fold(p), p);
    }

    #[test]
    fn layout_document_round_trips(
        k in 1.0f64..20.0,
        kd in 1.0f64..20.0,
        c in prop::array::uniform3(1.0f64..4.0),
        z in 0.5f64..3.0,
    ) {
        let doc = format!(
            "window 0 0 0 10 10 10\ndiel_bg {k}\ncond 3 {} {} {} {} {} {}\ndiel 2 {kd} 0 0 0 10 10 {z}\n",
            c[0], c[1], c[2], c[0] + 1.0, c[1] + 2.0, c[2] + 3.0
        );
        let a = Layout::parse(&doc).unwrap();
        prop_assert_eq!(Layout::parse(&a.to_document()).unwrap(), a);
    }

    #[test]
    fn quantize_is_idempotent_and_close(v in 1e-3f64..1e3) {
        let q = quantize(v);
        prop_assert_eq!(quantize(q), q);
        prop_assert!((q - v).abs() <= 5e-3 * v);
    }

    #[test]
    fn accumulator_matches_direct_statistics(vals in prop::collection::vec((0..3u32, -10.0f64..10.0), 2..200)) {
        let mut acc = EstimatorAccumulator::new(vec![0, 1, 2]);
        for &(t, v) in &vals {
            acc.push(t, v).unwrap();
        }
        let n = vals.len() as f64;
        for id in 0..3 {
            let xs: Vec<f64> = vals.iter().map(|&(t, v)| if t == id { v } else { 0.0 }).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((acc.mean(id).unwrap() - mean).abs() <= 1e-9);
            prop_assert!((acc.stderr(id).unwrap() - (var / n).sqrt()).abs() <= 1e-9);
        }
    }

    #[test]
    fn dataset_file_round_trips(seed in any::<u64>(), p in 0.0f64..1.0, count in 0usize..3, fill in -1.0f32..1.0) {
        let n = 5;
        let rec = DatasetRecord {
            grid: vec![fill.abs(); n * n * n],
            poisson: vec![fill; 6 * n * n],
            grad_signed_z: vec![-fill; 6 * n * n],
            weight_z: fill * 2.0,
        };
        let file = DatasetFile {
            header: DatasetHeader { n: n as u32, count: count as u64, p_nest: p, blocks: 5, seed },
            records: vec![rec; count],
            resample_count: seed % 7,
        };
        let mut bytes = Vec::new();
        file.write_to(&mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), 40 + count * 4 * file.header.record_floats() + 8);
        prop_assert_eq!(DatasetFile::read_from(&mut bytes.as_slice()).unwrap(), file);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kernels_are_normalized_and_equivariant(g in grid(5), s in symmetry()) {
        let opts = FdmOptions::default();
        let ks = kernel_set(&g, &opts).unwrap();
        prop_assert!((ks.poisson.sum() - 1.0).abs() <= 1e-9);
        prop_assert!(ks.poisson.data().iter().all(|&p| p >= 0.0));
        for axis in 0..3 {
            prop_assert!(ks.grad[axis].signed.sum().abs() <= 1e-7);
        }
        let direct = kernel_set(&g.transformed(&s), &opts).unwrap();
        prop_assert!(direct.poisson.max_abs_diff(&ks.transformed(&s).poisson) <= 1e-10);
        let face: f64 = SignedAxis::ALL.iter().map(|&f| ks.face_dist[f.index()]).sum();
        prop_assert!((face - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalization_removes_kappa_scale(g in grid(5), k in 0.1f64..50.0) {
        let scaled = VoxelGrid::from_raw(5, g.values().iter().map(|v| v * k).collect()).unwrap();
        for (a, b) in scaled.values().iter().zip(g.values()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn weights_file_round_trips(seed in any::<u64>()) {
        let mut b = ModelBundle::random(5, seed).unwrap();
        b.record_probes(2, seed ^ 1).unwrap();
        let bytes = b.to_bytes();
        let back = ModelBundle::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.check_probes(1e-4).unwrap(), b.check_probes(0.0).unwrap());
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
