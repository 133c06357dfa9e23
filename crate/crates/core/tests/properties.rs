use cfe_core::adaptation::adapt;
use cfe_core::attack::attack_score;
use cfe_core::cipher::{decrypt, encrypt, pixel_shuffle, pixel_unshuffle};
use cfe_core::codec::{decode_intra, encode_intra};
use cfe_core::geometry::{BlockGrid, Clip};
use cfe_core::keyschedule::{expand, is_permutation, KeyMaterial, Mode};
use cfe_core::metrics::psnr;
use cfe_core::model::{forward, init_weights, VtConfig};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::V1), Just(Mode::V2)]
}

/// Clips whose sides are 16..=64 in MB steps, with 1..=4 frames.
fn clip() -> impl Strategy<Value = Clip> {
    (1usize..=4, 1usize..=4, 1usize..=4).prop_flat_map(|(f, r, c)| {
        let (h, w) = (16 * r, 16 * c);
        proptest::collection::vec(any::<u8>(), f * h * w * 3).prop_map(move |d| Clip::new(f, h, w, d).unwrap())
    })
}

fn plan_for(clip: &Clip, mode: Mode, k_st: u64, k_ms: u64) -> cfe_core::keyschedule::TransformPlan {
    let grid = BlockGrid::default_for(clip.height(), clip.width()).unwrap();
    expand(&KeyMaterial::new(mode, k_st, k_ms), &grid)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decrypt_inverts_encrypt(clip in clip(), mode in mode(), k_st: u64, k_ms: u64) {
        let plan = plan_for(&clip, mode, k_st, k_ms);
        let enc = encrypt(&clip, &plan).unwrap();
        prop_assert_eq!(decrypt(&enc, &plan).unwrap(), clip.clone());
        prop_assert_eq!(encrypt(&enc, &plan.inverse()).unwrap(), clip);
    }

    #[test]
    fn expanded_plans_are_well_formed(mode in mode(), k_st: u64, k_ms: u64, r in 1usize..6, c in 1usize..6) {
        let grid = BlockGrid::default_for(16 * r, 16 * c).unwrap();
        let plan = expand(&KeyMaterial::new(mode, k_st, k_ms), &grid);
        prop_assert!(is_permutation(&plan.mb_perm) && plan.mb_perm.len() == r * c);
        let per_key = if mode == Mode::V1 { 1 } else { r * c };
        prop_assert_eq!(plan.sb_params.len(), per_key);
        prop_assert_eq!(plan.sb_perms.len(), per_key);
        for p in &plan.sb_perms {
            prop_assert!(is_permutation(p) && p.len() == 4);
        }
        prop_assert_eq!(plan, expand(&KeyMaterial::new(mode, k_st, k_ms), &grid));
    }

    #[test]
    fn same_plan_for_every_frame(clip in clip(), mode in mode(), k_st: u64, k_ms: u64) {
        let plan = plan_for(&clip, mode, k_st, k_ms);
        let enc = encrypt(&clip, &plan).unwrap();
        for f in 0..clip.frames() {
            let single = Clip::from_frames(clip.height(), clip.width(), &[clip.frame(f)]).unwrap();
            let alone = encrypt(&single, &plan).unwrap();
            prop_assert_eq!(alone.frame(0), enc.frame(f));
        }
    }

    #[test]
    fn pixel_shuffle_round_trips(clip in clip(), seed: u64) {
        prop_assert_eq!(pixel_unshuffle(&pixel_shuffle(&clip, seed), seed), clip);
    }

    #[test]
    fn codec_keeps_shape_and_psnr_is_symmetric(clip in clip(), q in 1u32..=100) {
        let dec = decode_intra(&encode_intra(&clip, q).unwrap()).unwrap();
        prop_assert_eq!(dec.shape(), clip.shape());
        let (a, b) = (psnr(&clip, &dec).unwrap(), psnr(&dec, &clip).unwrap());
        prop_assert!(a == b || (a.is_infinite() && b.is_infinite()));
    }

    #[test]
    fn identity_placement_scores_one(r in 1usize..8, c in 1usize..8) {
        prop_assume!(r * c > 1);
        let origins: Vec<usize> = (0..r * c).collect();
        prop_assert_eq!(attack_score(&origins, r, c), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adapted_model_matches_plain_model(seed: u64, mode in mode(), k_st: u64, k_ms: u64, data_seed: u64) {
        let cfg = VtConfig { seed, ..VtConfig::default() };
        let w = init_weights(&cfg).unwrap();
        let mut rng = cfe_core::keyschedule::SplitMix64::new(data_seed);
        let data = (0..cfg.frames * cfg.height * cfg.width * 3).map(|_| rng.next_u64() as u8).collect();
        let clip = Clip::new(cfg.frames, cfg.height, cfg.width, data).unwrap();
        let plan = plan_for(&clip, mode, k_st, k_ms);
        let plain = forward(&clip, &w).unwrap();
        let enc = forward(&encrypt(&clip, &plan).unwrap(), &adapt(&w, &plan).unwrap()).unwrap();
        for (a, b) in plain.iter().zip(&enc) {
            prop_assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }
}
