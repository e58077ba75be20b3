use proptest::prelude::*;

use shadowpose::degrade::{apply_film_filter, FilmFilterParams};
use shadowpose::imaging::{mean_ssim, sobel_edge_map, ssim_map};
use shadowpose::pose::{match_counts, Keypoint, MatchConfig, Skeleton};
use shadowpose::{Checkpoint, ImageTensor, Network, NetworkConfig, ResizePolicy, SsimParams};

fn image(h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| ImageTensor::from_vec(h, w, 3, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = ImageTensor> {
    (4usize..20, 4usize..20).prop_flat_map(|(h, w)| image(h, w))
}

fn skeletons() -> impl Strategy<Value = Vec<Skeleton>> {
    prop::collection::vec(
        prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, prop::bool::weighted(0.8)), 18),
        0..3,
    )
    .prop_map(|people| {
        people
            .into_iter()
            .enumerate()
            .map(|(p, kps)| Skeleton {
                person_id: p,
                keypoints: kps
                    .into_iter()
                    .enumerate()
                    .map(|(i, (x, y, on))| Keypoint {
                        part_id: i,
                        x,
                        y,
                        confidence: if on { 1.0 } else { 0.0 },
                    })
                    .collect(),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_is_symmetric_and_bounded(pair in (4usize..16, 4usize..16).prop_flat_map(|(h, w)| (image(h, w), image(h, w)))) {
        let (a, b) = pair;
        let p = SsimParams::default();
        let ab = ssim_map(&a, &b, &p).unwrap();
        let ba = ssim_map(&b, &a, &p).unwrap();
        for (x, y) in ab.as_slice().iter().zip(ba.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(*x <= 1.0 + 1e-12 && *x >= -1.0 - 1e-12);
        }
        prop_assert!((mean_ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sobel_is_non_negative_and_shift_invariant(img in sized_image(), shift in -0.5f64..0.5) {
        let e = sobel_edge_map(&img).unwrap();
        let shifted = sobel_edge_map(&img.map(|v| v + shift)).unwrap();
        prop_assert!(e.as_slice().iter().all(|v| *v >= 0.0));
        for (x, y) in e.as_slice().iter().zip(shifted.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn resize_policies_restore_source_shape(img in sized_image(), h in 3usize..24, w in 3usize..24) {
        for policy in [ResizePolicy::Scale, ResizePolicy::CenterCrop] {
            let x = policy.apply(&img, h, w).unwrap();
            prop_assert_eq!((x.height(), x.width()), (h, w));
            let back = policy.restore(&x, &img).unwrap();
            prop_assert_eq!(back.shape(), img.shape());
        }
    }

    #[test]
    fn film_output_stays_in_range(img in image(12, 12), layers in 1u32..4, seed in any::<u64>(), grain in 0.0f64..0.1) {
        let p = FilmFilterParams { seed, grain, ..FilmFilterParams::with_layers(layers) };
        let out = apply_film_filter(&img, &p).unwrap();
        prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out, apply_film_filter(&img, &p).unwrap());
    }

    #[test]
    fn match_counts_are_consistent(enh in skeletons(), clear in skeletons(), t in 0.0f64..30.0) {
        let m = MatchConfig { distance_threshold: t };
        let c = match_counts(&enh, &clear, &m);
        prop_assert!(c.n_te <= c.n_e);
        if let Some(s) = c.smap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        let wider = match_counts(&enh, &clear, &MatchConfig { distance_threshold: t + 5.0 });
        prop_assert!(wider.n_te >= c.n_te);
        prop_assert_eq!(match_counts(&clear, &clear, &m).n_te, c.n_c);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let net = Network::build(NetworkConfig::scaled(8, 8, 2), seed).unwrap();
        let ck = Checkpoint::from_network(&net, Default::default());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = back.to_network().unwrap();
        prop_assert_eq!(restored.named_parameters(), net.named_parameters());
    }
}
