use diffgan_api::{CompletionRequest, GenerateRequest, GenerateTask, RequestElement};
use diffgan_client::{Client, ClientError};
use diffgan_core::diffusion::make_schedule;
use diffgan_core::mask::Task;
use diffgan_core::nets::checkpoint::{self, CheckpointMeta, FORMAT_VERSION};
use diffgan_core::nets::nn::EncoderConfig;
use diffgan_core::nets::{ModelConfig, Networks, Precision};
use diffgan_core::synth::LABELS;
use diffgan_service::{router, serve, AppState};
use tokio::net::TcpListener;

async fn start(state: AppState) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, router(state, None).unwrap()));
    format!("http://{addr}")
}

fn loaded(dir: &std::path::Path) -> AppState {
    let enc = EncoderConfig { embed_dim: 16, layers: 1, heads: 2, ffn_width: 32 };
    let model = ModelConfig {
        rows: 4,
        num_labels: LABELS.len(),
        latent_dim: 8,
        generator: enc,
        discriminator: enc,
        decoder: enc,
        generator_positional: false,
        precision: Precision::F32,
    };
    let nets = Networks::new(model.clone(), 3).unwrap();
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model,
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
        schedule: make_schedule(4).unwrap(),
        task: Task::Completion,
        dataset: "synth-columns".into(),
        git_hash: None,
        train: None,
    };
    let path = dir.join("model.safetensors");
    checkpoint::save(&path, &nets, &meta).unwrap();
    AppState::load(&path).unwrap()
}

fn locked(label: &str, center: [f64; 2], size: [f64; 2]) -> RequestElement {
    RequestElement { label: label.into(), center, size, locked: true }
}

#[tokio::test]
async fn round_trips_against_live_server() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::new(start(loaded(dir.path())).await + "/");
    let meta = client.meta().await.unwrap();
    assert_eq!(meta.labels.len(), LABELS.len());

    let req = CompletionRequest {
        elements: vec![locked("text", [0.25, 0.5], [0.3, 0.2])],
        num_samples: 3,
        seed: Some(11),
        canvas: None,
    };
    let a = client.complete(&req).await.unwrap();
    let b = client.complete(&req).await.unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.samples.len(), 3);
    for s in &a.samples {
        assert_eq!(s.elements[0].center, [0.25, 0.5]);
        assert_eq!(s.elements[0].size, [0.3, 0.2]);
    }

    let gen = GenerateRequest {
        task: GenerateTask::CToSp,
        labels: Some(vec!["figure".into(), "text".into()]),
        sizes: None,
        num_samples: 2,
        seed: Some(1),
        canvas: None,
    };
    assert!(client.generate(&gen).await.unwrap().samples.iter().all(|s| s.elements.len() == 2));
}

#[tokio::test]
async fn error_statuses_surface() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::new(start(loaded(dir.path())).await);
    let bad = CompletionRequest {
        elements: vec![locked("text", [1.5, 0.5], [0.3, 0.2])],
        num_samples: 1,
        seed: None,
        canvas: None,
    };
    match client.complete(&bad).await {
        Err(ClientError::Status { status, message }) => {
            assert_eq!(status.as_u16(), 400);
            assert!(message.contains("center[0]"), "{message}");
        }
        other => panic!("expected a 400, got {other:?}"),
    }

    let empty = Client::new(start(AppState::empty()).await);
    assert_eq!(empty.meta().await.unwrap_err().status().map(|s| s.as_u16()), Some(503));
}

#[tokio::test]
async fn unreachable_server_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = Client::new(format!("http://{addr}")).meta().await.unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)));
}
