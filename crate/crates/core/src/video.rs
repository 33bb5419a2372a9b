//! Video synthesis bracketed between the input image and the end keyframe.

use thiserror::Error;

use crate::model::{FrameSequence, ImageBuffer, PromptBundle};
use crate::providers::{Interpolator, ProviderError};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("interpolator returned {got} frames, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("frame {index} is not byte-identical to the {which} keyframe")]
    Anchoring { index: usize, which: &'static str },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    Dimension {
        index: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Delegates to the interpolator with the optimization prompt and checks the
/// result: exact length, uniform size, and byte-exact endpoints.
pub fn synthesize(
    start: &ImageBuffer,
    end: &ImageBuffer,
    bundle: &PromptBundle,
    frame_count: usize,
    seed: u64,
    provider: &dyn Interpolator,
) -> Result<FrameSequence, VideoError> {
    if start.dimensions() != end.dimensions() {
        return Err(VideoError::Shape(format!(
            "start is {:?}, end is {:?}",
            start.dimensions(),
            end.dimensions()
        )));
    }
    if frame_count < 2 {
        return Err(VideoError::Shape(format!(
            "frame_count must be at least 2, got {frame_count}"
        )));
    }
    let video = provider.interpolate(start, end, bundle.optimization_prompt(), frame_count, seed)?;
    check_anchoring(&video, start, end, frame_count)?;
    Ok(video)
}

/// Validates a provider's sequence against the bracketing contract.
pub fn check_anchoring(
    video: &FrameSequence,
    start: &ImageBuffer,
    end: &ImageBuffer,
    frame_count: usize,
) -> Result<(), VideoError> {
    if video.len() != frame_count {
        return Err(VideoError::Length {
            expected: frame_count,
            got: video.len(),
        });
    }
    for (index, f) in video.frames().iter().enumerate() {
        if f.dimensions() != start.dimensions() {
            return Err(VideoError::Dimension {
                index,
                expected: start.dimensions(),
                got: f.dimensions(),
            });
        }
    }
    if video.first() != start {
        return Err(VideoError::Anchoring {
            index: 0,
            which: "start",
        });
    }
    if video.last() != end {
        return Err(VideoError::Anchoring {
            index: frame_count - 1,
            which: "end",
        });
    }
    Ok(())
}

/// Mean squared error over all samples, 0..=255 domain.
pub fn image_mse(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.data().len() as f64
}

/// Mean per-frame MSE between a generated video and a reference of the same
/// shape.
pub fn eval_against_reference(
    generated: &FrameSequence,
    reference: &FrameSequence,
) -> Result<f64, VideoError> {
    if generated.len() != reference.len() {
        return Err(VideoError::Shape(format!(
            "generated has {} frames, reference {}",
            generated.len(),
            reference.len()
        )));
    }
    if generated.dimensions() != reference.dimensions() {
        return Err(VideoError::Shape(format!(
            "generated is {:?}, reference {:?}",
            generated.dimensions(),
            reference.dimensions()
        )));
    }
    let total: f64 = generated
        .frames()
        .iter()
        .zip(reference.frames())
        .map(|(g, r)| image_mse(r, g))
        .sum();
    Ok(total / generated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FrameRate;
    use crate::providers::mock::MockInterpolator;

    fn bundle() -> PromptBundle {
        PromptBundle::new(vec!["dog".into()], "s", "make it move", "").unwrap()
    }

    fn seq(frames: Vec<ImageBuffer>) -> FrameSequence {
        FrameSequence::new(frames, FrameRate::default()).unwrap()
    }

    /// Wraps the crossfade and tampers with its output.
    struct Tamper(fn(Vec<ImageBuffer>) -> Vec<ImageBuffer>);
    impl Interpolator for Tamper {
        fn id(&self) -> String {
            "tamper".into()
        }
        fn interpolate(
            &self,
            s: &ImageBuffer,
            e: &ImageBuffer,
            p: &str,
            n: usize,
            seed: u64,
        ) -> Result<FrameSequence, ProviderError> {
            let frames = MockInterpolator.interpolate(s, e, p, n, seed)?.into_frames();
            Ok(seq((self.0)(frames)))
        }
    }

    #[test]
    fn two_frames_are_the_endpoints() {
        let a = ImageBuffer::filled(3, 3, [10; 3]).unwrap();
        let b = ImageBuffer::filled(3, 3, [200; 3]).unwrap();
        let v = synthesize(&a, &b, &bundle(), 2, 0, &MockInterpolator).unwrap();
        assert_eq!(v.frames(), &[a, b]);
    }

    #[test]
    fn short_sequence_is_rejected() {
        let a = ImageBuffer::filled(3, 3, [10; 3]).unwrap();
        let b = ImageBuffer::filled(3, 3, [200; 3]).unwrap();
        let drop_last = Tamper(|mut f| {
            f.pop();
            f
        });
        assert!(matches!(
            synthesize(&a, &b, &bundle(), 5, 0, &drop_last),
            Err(VideoError::Length { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn wrong_endpoints_are_rejected() {
        let a = ImageBuffer::filled(3, 3, [10; 3]).unwrap();
        let b = ImageBuffer::filled(3, 3, [200; 3]).unwrap();
        let bad_first = Tamper(|mut f| {
            f[0] = ImageBuffer::filled(3, 3, [11; 3]).unwrap();
            f
        });
        assert!(matches!(
            synthesize(&a, &b, &bundle(), 4, 0, &bad_first),
            Err(VideoError::Anchoring { index: 0, which: "start" })
        ));
        let bad_last = Tamper(|mut f| {
            let n = f.len();
            f[n - 1] = ImageBuffer::filled(3, 3, [0; 3]).unwrap();
            f
        });
        assert!(matches!(
            synthesize(&a, &b, &bundle(), 4, 0, &bad_last),
            Err(VideoError::Anchoring { index: 3, which: "end" })
        ));
    }

    #[test]
    fn reference_error_identities() {
        let zero = ImageBuffer::filled(2, 2, [0; 3]).unwrap();
        let full = ImageBuffer::filled(2, 2, [255; 3]).unwrap();
        let v = seq(vec![zero.clone(), full.clone()]);
        assert_eq!(eval_against_reference(&v, &v).unwrap(), 0.0);
        assert_eq!(
            eval_against_reference(&seq(vec![zero.clone()]), &seq(vec![full.clone()])).unwrap(),
            65025.0
        );
        assert!(eval_against_reference(&v, &seq(vec![zero])).is_err());
    }

    #[test]
    fn reference_error_matches_pixel_oracle() {
        // Two 2x2 frames each side, 8 pixels in total.
        let g = seq(vec![
            ImageBuffer::new(2, 2, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110]).unwrap(),
            ImageBuffer::new(2, 2, vec![255; 12]).unwrap(),
        ]);
        let r = seq(vec![
            ImageBuffer::new(2, 2, vec![5, 10, 15, 30, 45, 50, 55, 70, 85, 90, 95, 110]).unwrap(),
            ImageBuffer::new(2, 2, vec![250, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 0]).unwrap(),
        ]);
        // frame 0: six channels differ by 5 -> 6*25/12 = 12.5
        // frame 1: one by 5, one by 255 -> (25 + 65025)/12 = 5420.8333..
        let oracle = (12.5 + (25.0 + 65025.0) / 12.0) / 2.0;
        let got = eval_against_reference(&g, &r).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        assert_eq!(got, eval_against_reference(&r, &g).unwrap());
    }
}
