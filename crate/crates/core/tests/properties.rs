use proptest::prelude::*;
use vidbridge::diffusion::NoiseSchedule;
use vidbridge::enhancer::{parse_bundle, render_bundle};
use vidbridge::eval::{
    aggregate_preferences, ssim, Choice, EntryReport, MetricReport, PreferenceDimension, PreferenceVote,
    ReportFile,
};
use vidbridge::keyframe::{select_best, Candidate, CandidateScore};
use vidbridge::model::{
    content_digest, resize_bilinear, BinaryMask, FrameRate, FrameSequence, GenerationRequest, ImageBuffer,
    MaskEntry, MaskSet, PromptBundle,
};
use vidbridge::providers::mock::crossfade_frame;
use vidbridge::providers::wire;
use vidbridge::providers::Embedding;
use vidbridge::video::eval_against_reference;

fn image(max: u32) -> impl Strategy<Value = ImageBuffer> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
            .prop_map(move |data| ImageBuffer::new(w, h, data).unwrap())
    })
}

fn image_pair(max: u32) -> impl Strategy<Value = (ImageBuffer, ImageBuffer)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let n = (w * h * 3) as usize;
        (
            proptest::collection::vec(any::<u8>(), n),
            proptest::collection::vec(any::<u8>(), n),
        )
            .prop_map(move |(a, b)| (ImageBuffer::new(w, h, a).unwrap(), ImageBuffer::new(w, h, b).unwrap()))
    })
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,8}"
}

fn sentence() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 .;'-]{0,40}[A-Za-z0-9.]"
}

fn bundle() -> impl Strategy<Value = PromptBundle> {
    (
        proptest::collection::btree_set(word(), 1..5),
        sentence(),
        sentence(),
    )
        .prop_map(|(kw, fs, op)| PromptBundle::new(kw.into_iter().collect(), fs, op, "").unwrap())
}

fn request() -> impl Strategy<Value = GenerationRequest> {
    (image(6), "[a-z ]{1,30}[a-z]", 2usize..40, any::<u64>(), 0.0f64..10.0, 1usize..8).prop_map(
        |(input_image, user_text, frame_count, seed, lambda_mask, candidate_count)| GenerationRequest {
            input_image,
            user_text,
            frame_count,
            seed,
            lambda_mask,
            candidate_count,
        },
    )
}

fn metric_report() -> impl Strategy<Value = MetricReport> {
    (
        0.0f64..65025.0,
        -1.0f64..=1.0,
        -1.0f64..=1.0,
        -1.0f64..=1.0,
        proptest::option::of(0.0f64..=1.0),
        proptest::option::of((-1.0f64..=1.0, -1.0f64..=1.0)),
    )
        .prop_map(|(mse, a, b, d, dover, reference)| MetricReport {
            mse_first: mse,
            image_genvideo_clip: a,
            genvideo_text_clip: b,
            genvideo_refvideo_corresponding: reference.map(|r| r.0),
            genvideo_clip_temporal: d,
            genvideo_refvideo_clip: reference.map(|r| r.0),
            dover,
            genvideo_refvideo_ssim: reference.map(|r| r.1),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_serde_and_png_round_trip(img in image(12)) {
        let json = serde_json::to_string(&img).unwrap();
        prop_assert_eq!(&serde_json::from_str::<ImageBuffer>(&json).unwrap(), &img);
        prop_assert_eq!(&ImageBuffer::from_png(&img.to_png().unwrap()).unwrap(), &img);
        prop_assert_eq!(&wire::decode_image(&wire::encode_image(&img).unwrap()).unwrap(), &img);
    }

    #[test]
    fn request_serde_round_trip_and_digest(req in request()) {
        let json = serde_json::to_string(&req).unwrap();
        let back: GenerationRequest = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &req);
        prop_assert_eq!(content_digest(&back), content_digest(&req));
        let mut other = req.clone();
        other.seed = other.seed.wrapping_add(1);
        prop_assert_ne!(content_digest(&other), content_digest(&req));
    }

    #[test]
    fn bundle_render_parse_round_trip(b in bundle()) {
        prop_assert_eq!(parse_bundle(&render_bundle(&b)).unwrap(), b.clone());
        let json = serde_json::to_string(&b).unwrap();
        prop_assert_eq!(serde_json::from_str::<PromptBundle>(&json).unwrap(), b);
    }

    #[test]
    fn mask_round_trips((w, h) in (1u32..10, 1u32..10), seed in any::<u64>(), conf in 0.0f64..=1.0) {
        let mask = BinaryMask::from_fn(w, h, |x, y| (seed >> ((x + y * w) % 64)) & 1 == 1).unwrap();
        prop_assert_eq!(&BinaryMask::from_png(&mask.to_png().unwrap()).unwrap(), &mask);
        let set = MaskSet::new(w, h, vec![MaskEntry { label: "a".into(), confidence: conf, mask }]).unwrap();
        let wired = wire::decode_masks(w, h, &wire::encode_masks(&set).unwrap()).unwrap();
        prop_assert_eq!(&wired, &set);
        let json = serde_json::to_string(&set).unwrap();
        prop_assert_eq!(serde_json::from_str::<MaskSet>(&json).unwrap(), set);
    }

    #[test]
    fn resize_is_idempotent_at_same_size(img in image(10)) {
        let (w, h) = img.dimensions();
        prop_assert_eq!(resize_bilinear(&img, w, h).unwrap(), img);
    }

    #[test]
    fn resize_preserves_constants(rgb in any::<[u8; 3]>(), w in 1u32..6, h in 1u32..6, tw in 1u32..20, th in 1u32..20) {
        let img = ImageBuffer::filled(w, h, rgb).unwrap();
        prop_assert_eq!(resize_bilinear(&img, tw, th).unwrap(), ImageBuffer::filled(tw, th, rgb).unwrap());
    }

    #[test]
    fn cosine_is_scale_invariant(
        v in proptest::collection::vec(-10.0f64..10.0, 2..16),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let w: Vec<f64> = v.iter().rev().cloned().collect();
        let a = Embedding::raw(v.clone());
        let scaled = Embedding::raw(v.iter().map(|x| x * k).collect());
        let b = Embedding::raw(w);
        let c1 = a.cosine(&b).unwrap();
        let c2 = scaled.cosine(&b).unwrap();
        prop_assert!((c1 - c2).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&c1));
        prop_assert!((a.cosine(&scaled).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn preference_tally_is_order_independent(
        choices in proptest::collection::vec((0usize..3, 0usize..3), 0..60),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let votes: Vec<PreferenceVote> = choices
            .iter()
            .enumerate()
            .map(|(i, (d, c))| PreferenceVote {
                item_id: format!("i{i}"),
                dimension: PreferenceDimension::ALL[*d],
                choice: [Choice::Ours, Choice::Baseline, Choice::Tie][*c],
            })
            .collect();
        let mut shuffled = votes.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(aggregate_preferences(&votes), aggregate_preferences(&shuffled));
    }

    #[test]
    fn selection_ignores_candidate_order(
        totals in proptest::collection::vec(0u8..5, 1..7),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let img = ImageBuffer::filled(1, 1, [0; 3]).unwrap();
        let cands: Vec<Candidate> = totals
            .iter()
            .enumerate()
            .map(|(offset, t)| Candidate {
                offset,
                seed: 100 + offset as u64,
                outcome: Ok((img.clone(), CandidateScore::new(*t as f64, 0.0, 0.0, 0.5))),
            })
            .collect();
        let expected_offset = totals
            .iter()
            .enumerate()
            .min_by_key(|(i, t)| (**t, *i))
            .unwrap()
            .0;
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let picked = select_best(&shuffled).unwrap();
        prop_assert_eq!(shuffled[picked].offset, expected_offset);
    }

    #[test]
    fn crossfade_is_anchored((a, b) in image_pair(6), t in 2usize..20) {
        prop_assert_eq!(&crossfade_frame(&a, &b, 0, t), &a);
        prop_assert_eq!(&crossfade_frame(&a, &b, t - 1, t), &b);
    }

    #[test]
    fn reference_loss_symmetric_and_zero_iff_equal((a, b) in image_pair(5)) {
        let fps = FrameRate::default();
        let va = FrameSequence::new(vec![a.clone(), b.clone()], fps).unwrap();
        let vb = FrameSequence::new(vec![b.clone(), a.clone()], fps).unwrap();
        let ab = eval_against_reference(&va, &vb).unwrap();
        prop_assert_eq!(ab, eval_against_reference(&vb, &va).unwrap());
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert_eq!(eval_against_reference(&va, &va).unwrap(), 0.0);
    }

    #[test]
    fn ssim_symmetric_and_bounded((a, b) in image_pair(14)) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_round_trips(rows in proptest::collection::vec(metric_report(), 1..5)) {
        let entries: Vec<EntryReport> = rows
            .into_iter()
            .enumerate()
            .map(|(i, metrics)| EntryReport { id: format!("e{i}"), metrics })
            .collect();
        let file = ReportFile::from_entries(entries).unwrap();
        let json = file.render(vidbridge::eval::ReportFormat::Json);
        prop_assert_eq!(&ReportFile::from_json(&json).unwrap(), &file);
        let back = ReportFile::from_csv(&file.to_csv()).unwrap();
        prop_assert_eq!(back.entries.len(), file.entries.len());
        for (x, y) in back.entries.iter().zip(&file.entries) {
            for (p, q) in x.metrics.values().iter().zip(y.metrics.values()) {
                match (p, q) {
                    (Some(p), Some(q)) => prop_assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0)),
                    (None, None) => {}
                    _ => prop_assert!(false, "presence mismatch"),
                }
            }
        }
    }

    #[test]
    fn schedule_table_round_trip(alphas in proptest::collection::vec(0.001f64..=1.0, 1..30)) {
        let s = NoiseSchedule::from_alphas(alphas).unwrap();
        prop_assert_eq!(NoiseSchedule::from_table(&s.to_table()).unwrap(), s);
    }
}
