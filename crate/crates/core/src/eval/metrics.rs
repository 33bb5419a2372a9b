//! Per-video metrics: first-frame MSE, embedding cosines and SSIM.

use crate::model::{FrameSequence, ImageBuffer};
use crate::providers::{Embedder, Embedding};
use crate::video::image_mse;

use super::ssim::ssim_luma;
use super::EvalError;

fn same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), EvalError> {
    if a.dimensions() != b.dimensions() {
        return Err(EvalError::Shape(format!(
            "{:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

fn same_len(a: &FrameSequence, b: &FrameSequence) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Shape(format!(
            "video has {} frames, reference {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// MSE between the input image and the first generated frame.
pub fn mse_first(input_image: &ImageBuffer, video: &FrameSequence) -> Result<f64, EvalError> {
    same_dims(input_image, video.first())?;
    Ok(image_mse(input_image, video.first()))
}

pub(crate) fn embed_frames(
    video: &FrameSequence,
    embedder: &dyn Embedder,
) -> Result<Vec<Embedding>, EvalError> {
    video
        .frames()
        .iter()
        .map(|f| embedder.embed_image(f).map_err(EvalError::from))
        .collect()
}

pub(crate) fn mean_cosine_to(anchor: &Embedding, frames: &[Embedding]) -> Result<f64, EvalError> {
    let sum = frames
        .iter()
        .map(|f| anchor.cosine(f))
        .sum::<Result<f64, _>>()?;
    Ok(sum / frames.len() as f64)
}

pub(crate) fn mean_pairwise_cosine(a: &[Embedding], b: &[Embedding]) -> Result<f64, EvalError> {
    let sum = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.cosine(y))
        .sum::<Result<f64, _>>()?;
    Ok(sum / a.len() as f64)
}

pub(crate) fn temporal_from(frames: &[Embedding]) -> Result<f64, EvalError> {
    if frames.len() < 2 {
        return Err(EvalError::TooShort(frames.len()));
    }
    mean_pairwise_cosine(&frames[..frames.len() - 1], &frames[1..])
}

/// Mean cosine between the input image and every generated frame.
pub fn clip_image_video(
    input_image: &ImageBuffer,
    video: &FrameSequence,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    let anchor = embedder.embed_image(input_image)?;
    mean_cosine_to(&anchor, &embed_frames(video, embedder)?)
}

/// Mean cosine between the prompt text and every generated frame.
pub fn clip_text_video(
    prompt_text: &str,
    video: &FrameSequence,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    let anchor = embedder.embed_text(prompt_text)?;
    mean_cosine_to(&anchor, &embed_frames(video, embedder)?)
}

/// Mean cosine between adjacent frames.
pub fn clip_temporal(video: &FrameSequence, embedder: &dyn Embedder) -> Result<f64, EvalError> {
    if video.len() < 2 {
        return Err(EvalError::TooShort(video.len()));
    }
    temporal_from(&embed_frames(video, embedder)?)
}

/// Mean cosine between corresponding generated and reference frames.
pub fn clip_corresponding(
    video: &FrameSequence,
    reference: &FrameSequence,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    same_len(video, reference)?;
    mean_pairwise_cosine(&embed_frames(video, embedder)?, &embed_frames(reference, embedder)?)
}

/// Same quantity as [`clip_corresponding`], reported under temporal
/// consistency.
pub fn clip_refvideo(
    video: &FrameSequence,
    reference: &FrameSequence,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    clip_corresponding(video, reference, embedder)
}

/// Mean local SSIM on BT.601 luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    same_dims(a, b)?;
    Ok(ssim_luma(a, b))
}

/// Mean SSIM over corresponding frames.
pub fn ssim_video(video: &FrameSequence, reference: &FrameSequence) -> Result<f64, EvalError> {
    same_len(video, reference)?;
    let sum = video
        .frames()
        .iter()
        .zip(reference.frames())
        .map(|(a, b)| ssim(a, b))
        .sum::<Result<f64, _>>()?;
    Ok(sum / video.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FrameRate;
    use crate::providers::mock::MockEmbedder;

    fn seq(frames: Vec<ImageBuffer>) -> FrameSequence {
        FrameSequence::new(frames, FrameRate::default()).unwrap()
    }

    fn gradient(offset: u8) -> ImageBuffer {
        ImageBuffer::from_fn(8, 8, |x, y| [(x * 20) as u8 + offset, (y * 20) as u8, offset]).unwrap()
    }

    #[test]
    fn mse_first_cases() {
        let a = gradient(0);
        assert_eq!(mse_first(&a, &seq(vec![a.clone(), gradient(9)])).unwrap(), 0.0);
        let zero = ImageBuffer::filled(2, 2, [0; 3]).unwrap();
        let full = ImageBuffer::filled(2, 2, [255; 3]).unwrap();
        assert_eq!(mse_first(&zero, &seq(vec![full])).unwrap(), 65025.0);
        assert!(mse_first(&a, &seq(vec![zero])).is_err());
    }

    #[test]
    fn mse_first_two_by_two_oracle() {
        let input = ImageBuffer::new(2, 2, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]).unwrap();
        let first = ImageBuffer::new(2, 2, vec![1, 1, 4, 0, 4, 5, 16, 7, 8, 9, 10, 0]).unwrap();
        // squared diffs: 1,0,4,9,0,0,100,0,0,0,0,121 -> 235 / 12
        let v = mse_first(&input, &seq(vec![first])).unwrap();
        assert!((v - 235.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn clip_identities() {
        let a = gradient(0);
        let constant = seq(vec![a.clone(), a.clone(), a.clone()]);
        assert!((clip_image_video(&a, &constant, &MockEmbedder).unwrap() - 1.0).abs() < 1e-12);
        assert!((clip_temporal(&constant, &MockEmbedder).unwrap() - 1.0).abs() < 1e-12);
        assert!((clip_corresponding(&constant, &constant, &MockEmbedder).unwrap() - 1.0).abs() < 1e-12);
        let single = seq(vec![gradient(30)]);
        let direct = MockEmbedder
            .embed_image(&a)
            .unwrap()
            .cosine(&MockEmbedder.embed_image(&gradient(30)).unwrap())
            .unwrap();
        assert_eq!(clip_image_video(&a, &single, &MockEmbedder).unwrap(), direct);
        assert!(matches!(
            clip_temporal(&single, &MockEmbedder),
            Err(EvalError::TooShort(1))
        ));
        assert!(clip_corresponding(&constant, &single, &MockEmbedder).is_err());
    }

    #[test]
    fn ssim_self_and_mismatch() {
        let a = ImageBuffer::from_fn(16, 16, |x, y| [(x * 15) as u8, (y * 15) as u8, 40]).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(ssim(&a, &gradient(0)).is_err());
    }

    #[test]
    fn ssim_constant_patches_closed_form() {
        let a = ImageBuffer::filled(16, 16, [0; 3]).unwrap();
        let b = ImageBuffer::filled(16, 16, [255; 3]).unwrap();
        let c1 = super::super::ssim::c1();
        let mb = 0.299 * 255.0 + 0.587 * 255.0 + 0.114 * 255.0;
        let expected = c1 / (mb * mb + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 6.5025 / (65025.0 + 6.5025)).abs() < 1e-9);
    }
}
