//! Remote adapter against the bundled HTTP server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use encodermi::contrastive::{Architecture, EncoderModel, EncoderSpec};
use encodermi::data::ImageTensor;
use encodermi::encoder::wire::EmbedResponse;
use encodermi::encoder::{
    connect_remote, connect_remote_with, embed_batch, BlackBoxEncoder, EncoderServer, LocalEncoder, QueryHandler,
    RemoteOptions,
};
use encodermi::membership::{extract_membership_features, SimilarityMetric};
use encodermi::data::AugmentationPipeline;
use encodermi::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fast() -> RemoteOptions {
    RemoteOptions { backoff: Duration::from_millis(5), timeout: Duration::from_secs(10), ..Default::default() }
}

fn fixed_vectors(count_offset: isize) -> QueryHandler {
    Arc::new(move |images: &[ImageTensor]| {
        let count = (images.len() as isize + count_offset).max(0) as usize;
        Ok(EmbedResponse { features: (0..count).map(|i| vec![i as f32, 1.0, -2.5]).collect(), dim: 3 })
    })
}

fn gradient_images(count: usize, side: usize) -> Vec<ImageTensor> {
    (0..count)
        .map(|k| {
            let px = (0..side * side * 3).map(|i| ((i * 31 + k * 17) % 97) as f32 / 96.0).collect();
            ImageTensor::new(side, side, 3, px).unwrap()
        })
        .collect()
}

#[test]
fn echoed_vectors_are_returned_verbatim() {
    let server = EncoderServer::start("127.0.0.1:0", None, fixed_vectors(0)).unwrap();
    let enc = connect_remote_with(&server.url(), None, (4, 4), fast()).unwrap();
    assert_eq!(enc.dim(), 3);
    let out = embed_batch(&enc, &gradient_images(3, 4)).unwrap();
    assert_eq!(out, vec![vec![0.0, 1.0, -2.5], vec![1.0, 1.0, -2.5], vec![2.0, 1.0, -2.5]]);
    assert!(embed_batch(&enc, &[]).unwrap().is_empty());
}

#[test]
fn requests_are_chunked() {
    let sizes = Arc::new(std::sync::Mutex::new(Vec::new()));
    let seen = Arc::clone(&sizes);
    let handler: QueryHandler = Arc::new(move |images: &[ImageTensor]| {
        seen.lock().unwrap().push(images.len());
        Ok(EmbedResponse { features: vec![vec![1.0, 2.0]; images.len()], dim: 2 })
    });
    let server = EncoderServer::start("127.0.0.1:0", None, handler).unwrap();
    let enc = connect_remote_with(&server.url(), None, (2, 2), fast()).unwrap();
    assert_eq!(embed_batch(&enc, &gradient_images(150, 2)).unwrap().len(), 150);
    assert_eq!(*sizes.lock().unwrap(), vec![1, 64, 64, 22]);
}

#[test]
fn wrong_count_is_a_protocol_violation() {
    let server = EncoderServer::start("127.0.0.1:0", None, fixed_vectors(1)).unwrap();
    let err = connect_remote_with(&server.url(), None, (4, 4), fast()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn unavailable_server_reports_attempts() {
    let addr = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap()
    };
    let err = connect_remote_with(&format!("http://{addr}/embed"), None, (4, 4), fast()).unwrap_err();
    match err {
        Error::Transport { attempts, ref message } => {
            assert_eq!(attempts, 4);
            assert!(err.to_string().contains("4 attempt"), "{message}");
        }
        other => panic!("expected transport error, got {other}"),
    }
}

#[test]
fn transient_failures_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let handler: QueryHandler = Arc::new(move |images: &[ImageTensor]| {
        if counter.fetch_add(1, Ordering::SeqCst) % 3 != 2 {
            return Err(Error::Dataset("temporarily unavailable".into()));
        }
        Ok(EmbedResponse { features: vec![vec![0.5]; images.len()], dim: 1 })
    });
    let server = EncoderServer::start("127.0.0.1:0", None, handler).unwrap();
    let enc = connect_remote_with(&server.url(), None, (2, 2), fast()).unwrap();
    assert_eq!(embed_batch(&enc, &gradient_images(2, 2)).unwrap().len(), 2);
    assert_eq!(calls.load(Ordering::SeqCst), 6);
}

#[test]
fn bearer_token_is_enforced() {
    let server = EncoderServer::start("127.0.0.1:0", Some("s3cret".into()), fixed_vectors(0)).unwrap();
    assert!(matches!(connect_remote_with(&server.url(), None, (4, 4), fast()), Err(Error::Protocol(_))));
    assert!(matches!(connect_remote_with(&server.url(), Some("nope"), (4, 4), fast()), Err(Error::Protocol(_))));
    assert_eq!(connect_remote_with(&server.url(), Some("s3cret"), (4, 4), fast()).unwrap().dim(), 3);
}

#[test]
fn remote_wrapping_a_checkpoint_matches_local() {
    let spec = EncoderSpec { arch: Architecture::SmallResnet, width: 4, dim: 16, resolution: (8, 8) };
    let local = Arc::new(LocalEncoder::new(EncoderModel::new(spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()));
    let server = EncoderServer::serve("127.0.0.1:0", None, local.clone()).unwrap();
    let remote = connect_remote(&server.url(), None, (8, 8)).unwrap();
    assert_eq!(remote.dim(), local.dim());
    // Dataset records are 8-bit, which the 16-bit wire format carries exactly.
    let images: Vec<ImageTensor> = gradient_images(70, 8).iter().map(ImageTensor::quantize_u8).collect();
    let a = embed_batch(local.as_ref(), &images).unwrap();
    let b = embed_batch(&remote, &images).unwrap();
    let max_diff = a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
    assert!(max_diff <= 1e-5, "max diff {max_diff}");

    let pipe = AugmentationPipeline::contrastive_default();
    let fl = extract_membership_features(&images[0], local.as_ref(), &pipe, 6, SimilarityMetric::Cosine, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let fr = extract_membership_features(&images[0], &remote, &pipe, 6, SimilarityMetric::Cosine, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_eq!(fl.len(), fr.len());
    assert!(fl.scores().iter().zip(fr.scores()).all(|(x, y)| (x - y).abs() < 1e-5));

    assert!(matches!(
        embed_batch(&remote, &gradient_images(1, 4)),
        Err(Error::DimensionMismatch { .. })
    ));
}
