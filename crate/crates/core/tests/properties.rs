mod common;

use chernflow_core::fiber::{
    anti_part, build_complex_frame, nijenhuis, project_11, standard_j, LieAlgebraModel, TwoForm,
};
use chernflow_core::grid::{ddbar_fd, TorusGrid};
use chernflow_core::suite::nijenhuis_identity_residual;
use chernflow_core::torus::{read_checkpoint, write_checkpoint, Checkpoint};
use chernflow_core::{Complex, Rational64};
use proptest::prelude::*;

fn rational() -> impl Strategy<Value = Rational64> {
    (-20i64..=20, 1i64..=9).prop_map(|(p, q)| Rational64::new(p, q))
}

fn rational_form(dim: usize) -> impl Strategy<Value = TwoForm<Rational64>> {
    prop::collection::vec(rational(), dim * (dim - 1) / 2).prop_map(move |vals| {
        let mut it = vals.into_iter();
        let mut m = nalgebra::DMatrix::from_element(dim, dim, Rational64::from_integer(0));
        for a in 0..dim {
            for b in a + 1..dim {
                let v = it.next().unwrap();
                m[(a, b)] = v;
                m[(b, a)] = -v;
            }
        }
        TwoForm::from_matrix(m, 0.0).unwrap()
    })
}

fn frame_bracket_01(m: &LieAlgebraModel<f64>, v: &[Complex<f64>], w: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let fr = build_complex_frame(m.j()).unwrap();
    fr.part_01(&m.bracket(v, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nijenhuis_symmetries_hold_for_random_structures(seed in any::<u64>(), six in any::<bool>()) {
        let mut r = common::rng(seed);
        let dim = if six { 6 } else { 4 };
        let m = common::random_bracket_model(&mut r, dim);
        let x = common::random_vector(&mut r, dim);
        let y = common::random_vector(&mut r, dim);
        prop_assert!(nijenhuis_identity_residual(&m, &x, &y) < 1e-12);
    }

    #[test]
    fn nijenhuis_on_frame_vectors(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let m = common::random_bracket_model(&mut r, 4);
        let fr = build_complex_frame(m.j()).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let (v, w, wb) = (fr.e(k), fr.e(l), fr.e_bar(l));
                let mixed = nijenhuis::<f64, Complex<f64>>(&m, &v, &wb).unwrap();
                prop_assert!(mixed.iter().all(|z| z.norm() < 1e-12));
                let pure = nijenhuis::<f64, Complex<f64>>(&m, &v, &w).unwrap();
                let expected = frame_bracket_01(&m, &v, &w);
                for (a, b) in pure.iter().zip(&expected) {
                    prop_assert!((a + b * 4.0).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn type_projection_is_exact(xi in rational_form(4)) {
        let j = standard_j::<Rational64>(4);
        let p = project_11(&xi, &j).unwrap();
        let q = anti_part(&xi, &j).unwrap();
        prop_assert_eq!(project_11(&p, &j).unwrap(), p.clone());
        prop_assert_eq!(p.add(&q), xi);
        prop_assert_eq!(project_11(&q, &j).unwrap(), TwoForm::zeros(4));
    }

    #[test]
    fn frame_round_trip(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let m = common::conjugated_model(&mut r, 6, 0);
        let fr = build_complex_frame(m.j()).unwrap();
        let x: Vec<Complex<f64>> = common::random_vector(&mut r, 6)
            .into_iter()
            .zip(common::random_vector(&mut r, 6))
            .map(|(a, b)| Complex::new(a, b))
            .collect();
        let back = fr.compose(&fr.decompose(&x));
        prop_assert!(x.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-12));
        let split: Vec<_> = fr.part_10(&x).iter().zip(fr.part_01(&x)).map(|(a, b)| a + b).collect();
        prop_assert!(x.iter().zip(&split).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn discrete_ddbar_is_hermitian_with_zero_mean_trace(
        values in prop::collection::vec(-1.0f64..1.0, 8usize.pow(4)),
        n in 1usize..=2,
    ) {
        let grid = TorusGrid::<f64>::new(n, 8).unwrap();
        let h = ddbar_fd(&grid, &values[..grid.num_points()]).unwrap();
        prop_assert_eq!(h.hermitian_defect(), 0.0);
        for i in 0..n {
            let mean = grid.mean(h.entry_planes(i, i).0);
            prop_assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        bits in prop::collection::vec(any::<u64>(), 16),
        t in any::<u64>(),
    ) {
        let ck = Checkpoint { n: 1, size: 4, t: f64::from_bits(t), phi: bits.iter().map(|b| f64::from_bits(*b)).collect() };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        prop_assert_eq!(buf.len(), 28 + 8 * 16);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.t.to_bits(), t);
        prop_assert_eq!(back.phi.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), bits);
    }
}
