use dgnc_core::data::{window, zscore_normalize};
use dgnc_core::dyngraph::{build_adjacency, topk_mask};
use dgnc_core::{BoldSignal, Tape, Tensor};
use proptest::prelude::*;

fn matrix(max_r: usize, max_c: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_r, 1..=max_c).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-scale..scale, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in matrix(6, 8, 500.0)) {
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let s = t.softmax_rows(v).unwrap();
        for row in t.value(s).chunks(x.cols()) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    #[test]
    fn sigmoid_in_open_unit_interval(x in matrix(4, 4, 30.0)) {
        let mut t = Tape::new();
        let v = t.constant(x);
        let s = t.sigmoid(v);
        prop_assert!(t.value(s).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn adjacency_strictly_inside_unit_interval(n in 1usize..8, seed in any::<u64>()) {
        let data: Vec<f64> = (0..n * n)
            .map(|i| (((seed.wrapping_add(i as u64) % 997) as f64) - 498.0) / 20.0)
            .collect();
        let mut t = Tape::new();
        let s = t.constant(Tensor::matrix(n, n, data).unwrap());
        let a = build_adjacency(&mut t, s).unwrap();
        prop_assert!(t.value(a).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn topk_is_idempotent(x in matrix(6, 6, 1.0), k_frac in 0.0f64..1.0) {
        let cols = x.cols();
        let k = 1 + ((cols - 1) as f64 * k_frac) as usize;
        let keep = topk_mask(x.data(), cols, k).unwrap();
        for row in keep.chunks(cols) {
            prop_assert_eq!(row.iter().filter(|&&b| b).count(), k);
        }
        // values outside the mask are zero; reapplying keeps the same set
        let once: Vec<f64> = x.data().iter().zip(&keep).map(|(&v, &m)| if m { v + 2.0 } else { 0.0 }).collect();
        let again = topk_mask(&once, cols, k).unwrap();
        prop_assert_eq!(keep, again);
    }

    #[test]
    fn windows_concatenate_to_prefix(x in matrix(40, 5, 3.0), p in 1usize..12) {
        prop_assume!(p <= x.rows());
        let s = BoldSignal::new("s", x.clone()).unwrap();
        let ws = window(&s, p).unwrap();
        prop_assert_eq!(ws.count(), x.rows() / p);
        let joined: Vec<f64> = ws.windows.iter().flat_map(|w| w.data().to_vec()).collect();
        prop_assert_eq!(&joined[..], &x.data()[..ws.count() * p * x.cols()]);
    }

    #[test]
    fn zscore_is_idempotent(x in matrix(30, 5, 100.0)) {
        let s = BoldSignal::new("s", x).unwrap();
        let once = zscore_normalize(&s);
        let twice = zscore_normalize(&once);
        for (a, b) in once.series.data().iter().zip(twice.series.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
