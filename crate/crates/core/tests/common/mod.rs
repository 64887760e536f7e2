//! Helpers shared by the integration tests: synthetic attribute records and
//! a scripted chat-completion server on a local socket.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use facecap::schema::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn base_record(id: &str) -> AttributeRecord {
    AttributeRecord {
        image_id: id.into(),
        source_dataset: SourceDataset::LaionFace,
        image_size: ImageSize {
            width: 512,
            height: 512,
        },
        detection: FaceDetection {
            face_count: 1,
            bbox: Some(BoundingBox::new(100.0, 120.0, 400.0, 440.0)),
            landmarks: Some(Landmarks {
                left_pupil: [200.0, 230.0],
                right_pupil: [300.0, 230.0],
                nose_tip: [250.0, 300.0],
                mouth_left: [210.0, 360.0],
                mouth_right: [290.0, 360.0],
            }),
            confidence: 0.99,
        },
        clip: ClipVerdict {
            is_real_human: true,
            has_text_overlay: false,
            teeth_visible: false,
            tongue_visible: false,
            raw_scores: BTreeMap::new(),
        },
        attributes: AttributeFlags::none(),
        emotions: EmotionScores::from_pairs([(Emotion::Neutral, 1.0)]),
        parsing: ParsingStats {
            hair_px: 20_000,
            face_skin_px: 60_000,
            left_eye_px: 400,
            right_eye_px: 400,
            inner_mouth_px: 0,
            upper_lip_px: 900,
            lower_lip_px: 1_100,
            face_height_px: 320,
            image_area_px: 512 * 512,
        },
        demographics: Demographics {
            age_pred: 30.0,
            gender: Gender::Female,
            ethnicity: Ethnicity::White,
        },
        is_blurry: false,
        is_monochrome: false,
        extractor_versions: BTreeMap::from([("detector".to_string(), "synthetic".to_string())]),
    }
}

/// A valid record with randomized content. Every record passes the
/// `laion_face` filter (face boxes are at least 270 px on a side).
pub fn synthetic_record(id: &str, rng: &mut impl Rng) -> AttributeRecord {
    let mut r = base_record(id);
    let side = rng.random_range(600..=1024u32);
    r.image_size = ImageSize {
        width: side,
        height: side,
    };
    let s = f64::from(side);
    let (x0, y0) = (s * rng.random_range(0.1..0.3), s * rng.random_range(0.1..0.3));
    let w = s * rng.random_range(0.45..0.6);
    r.detection.bbox = Some(BoundingBox::new(x0, y0, x0 + w, y0 + w * 1.1));
    let p = |fx: f64, fy: f64| [x0 + w * fx, y0 + w * fy];
    r.detection.landmarks = Some(Landmarks {
        left_pupil: p(0.33, 0.4),
        right_pupil: p(0.67, 0.4),
        nose_tip: p(0.5, 0.6),
        mouth_left: p(0.37, 0.8),
        mouth_right: p(0.63, 0.8),
    });
    r.detection.confidence = rng.random_range(0.9..1.0);

    let mut flags = AttributeFlags::none();
    for &a in Attribute::ALL {
        if rng.random_bool(0.15) {
            flags.set(a, true);
        }
    }
    r.attributes = flags;
    r.is_blurry = flags.get(Attribute::Blurry);
    r.is_monochrome = rng.random_bool(0.1);
    r.clip.teeth_visible = rng.random_bool(0.3);
    r.clip.tongue_visible = rng.random_bool(0.05);

    let raw: Vec<f64> = (0..Emotion::ALL.len()).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    r.emotions = EmotionScores::from_pairs(Emotion::ALL.iter().copied().zip(raw.iter().map(|v| v / total)));

    let skin = rng.random_range(20_000..80_000u64);
    r.parsing = ParsingStats {
        hair_px: (skin as f64 * rng.random_range(0.0..1.2)) as u64,
        face_skin_px: skin,
        left_eye_px: (skin as f64 * rng.random_range(0.0..0.01)) as u64,
        right_eye_px: (skin as f64 * rng.random_range(0.0..0.01)) as u64,
        inner_mouth_px: (skin as f64 * rng.random_range(0.0..0.04)) as u64,
        upper_lip_px: skin / 60,
        lower_lip_px: skin / 50,
        face_height_px: (w * 1.1) as u64,
        image_area_px: u64::from(side) * u64::from(side),
    };
    r.demographics = Demographics {
        age_pred: rng.random_range(1.0..85.0),
        gender: *Gender::ALL.choose(rng).unwrap(),
        ethnicity: *Ethnicity::ALL.choose(rng).unwrap(),
    };
    r
}

/// A 1024x1024 record whose face box is `w` by `h` pixels.
pub fn with_face(id: &str, w: f64, h: f64) -> AttributeRecord {
    let mut r = base_record(id);
    r.image_size = ImageSize {
        width: 1024,
        height: 1024,
    };
    r.parsing.image_area_px = 1024 * 1024;
    let (x0, y0) = (100.0, 100.0);
    r.detection.bbox = Some(BoundingBox::new(x0, y0, x0 + w, y0 + h));
    let p = |fx: f64, fy: f64| [x0 + w * fx, y0 + h * fy];
    r.detection.landmarks = Some(Landmarks {
        left_pupil: p(0.33, 0.4),
        right_pupil: p(0.67, 0.4),
        nose_tip: p(0.5, 0.6),
        mouth_left: p(0.37, 0.8),
        mouth_right: p(0.63, 0.8),
    });
    r
}

pub fn synthetic_records(n: usize, seed: u64) -> Vec<AttributeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| synthetic_record(&format!("syn-{i:04}"), &mut rng)).collect()
}

pub fn write_jsonl(path: &Path, records: &[AttributeRecord]) {
    let body: String = records.iter().map(|r| serialize_record(r) + "\n").collect();
    std::fs::write(path, body).unwrap();
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// What the fake server does with one connection.
#[derive(Debug, Clone)]
pub enum Reply {
    /// 200 with a chat-completion body carrying this content.
    Content(String),
    Status(u16),
    /// Close the socket without answering.
    Hangup,
    /// 200 with this raw body.
    Raw(String),
}

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

impl SeenRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct FakeLlm {
    pub url: String,
    connections: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<SeenRequest>>>,
}

impl FakeLlm {
    /// Serves `script` in order, one reply per connection; after the
    /// script runs out `fallback` is repeated.
    pub fn start(script: Vec<Reply>, fallback: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let connections = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (c, b) = (connections.clone(), requests.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let i = c.fetch_add(1, Ordering::SeqCst);
                let reply = script.get(i).cloned().unwrap_or_else(|| fallback.clone());
                serve(stream, reply, &b);
            }
        });
        Self {
            url,
            connections,
            requests,
        }
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn bodies(&self) -> Vec<serde_json::Value> {
        self.requests().into_iter().map(|r| r.body).collect()
    }
}

fn serve(mut stream: TcpStream, reply: Reply, requests: &Mutex<Vec<SeenRequest>>) {
    if let Reply::Hangup = reply {
        return;
    }
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0; len];
    if reader.read_exact(&mut body).is_ok() {
        let body = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
        requests.lock().unwrap().push(SeenRequest { headers, body });
    }
    let (status, payload) = match reply {
        Reply::Content(text) => (
            200,
            serde_json::json!({
                "id": "cmpl-test",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
            })
            .to_string(),
        ),
        Reply::Status(code) => (code, "{\"error\":\"scripted\"}".to_string()),
        Reply::Raw(body) => (200, body),
        Reply::Hangup => unreachable!(),
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

/// A local address with nothing listening on it.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1/chat/completions")
}
