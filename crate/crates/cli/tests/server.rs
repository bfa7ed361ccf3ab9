mod common;

use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::mpsc;
use std::thread;

use common::small_dataset;
use semflash_cli::config::{DecodeMode, GridSource, PipelineConfig};
use semflash_cli::run_decode;
use semflash_cli::server::{serve, ApiState};
use semflash_core::classify::{build_histogram, sample_cells, select_threshold};
use semflash_core::doc;
use semflash_core::grid::{GridSpec, Point, TL, TR};
use semflash_core::imagery::{decode_image, load_image};
use tiny_http::Method;

struct Reply {
    status: u16,
    content_type: String,
    body: Vec<u8>,
}

fn request(addr: SocketAddr, method: &str, target: &str, body: &[u8]) -> Reply {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} {target} HTTP/1.0\r\nHost: {addr}\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .unwrap();
    s.write_all(body).unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header terminator");
    let head = String::from_utf8(raw[..split].to_vec()).unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let content_type = head
        .lines()
        .find_map(|l| l.strip_prefix("Content-Type: "))
        .unwrap_or("")
        .to_string();
    Reply {
        status,
        content_type,
        body: raw[split + 4..].to_vec(),
    }
}

fn text(r: &Reply) -> &str {
    std::str::from_utf8(&r.body).unwrap()
}

fn encode(q: &str) -> String {
    form_urlencoded::byte_serialize(q.as_bytes()).collect()
}

#[test]
fn api_round_trip_against_the_oracle_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = small_dataset(tmp.path(), 31, 0.0, 1, DecodeMode::Merged);
    let truth_grid = fs::read_to_string(&ds.grid).unwrap();
    fs::remove_file(&ds.grid).unwrap();
    let mut cfg = PipelineConfig::load(&ds.config).unwrap();
    cfg.grid = GridSource::Path("interactive".into());
    cfg.save(&ds.config).unwrap();

    let (tx, rx) = mpsc::channel();
    let server_cfg = cfg.clone();
    let server = thread::spawn(move || serve(&server_cfg, 0, |addr| tx.send(addr).unwrap()));
    let addr = rx.recv().unwrap();

    // stitched on demand, served as PNG
    let mosaic = load_image(tmp.path().join("out/acq0/mosaic.pgm")).unwrap();
    let r = request(addr, "GET", "/image", b"");
    assert_eq!((r.status, r.content_type.as_str()), (200, "image/png"));
    assert_eq!(decode_image(&r.body).unwrap(), mosaic);

    assert_eq!(request(addr, "GET", "/grid", b"").status, 404);

    // invalid grids are refused with the violated invariant
    let grid: GridSpec = doc::from_str(&truth_grid).unwrap();
    let mut one_row = grid.clone();
    one_row.rows = 1;
    let r = request(addr, "PUT", "/grid", doc::to_string(&one_row).as_bytes());
    assert_eq!(r.status, 422);
    assert!(text(&r).contains("rows and cols must both be >= 2"), "{}", text(&r));
    let mut crossed = grid.clone();
    crossed.corners.swap(TL, TR);
    let r = request(addr, "PUT", "/grid", doc::to_string(&crossed).as_bytes());
    assert_eq!(r.status, 422);
    assert_eq!(request(addr, "PUT", "/grid", b"{\"schema\": \"layout.v1\"}").status, 400);

    // saving persists verbatim
    let r = request(addr, "PUT", "/grid", truth_grid.as_bytes());
    assert_eq!(r.status, 200);
    assert_eq!(fs::read_to_string(tmp.path().join("grid.json")).unwrap(), truth_grid);
    assert_eq!(text(&request(addr, "GET", "/grid", b"")), truth_grid);

    // served statistics are the core's own output, byte for byte
    let samples = sample_cells(&mosaic, &grid).unwrap();
    let r = request(addr, "GET", "/cells?grid=current", b"");
    assert_eq!(text(&r), doc::to_string(&samples));
    for bins in [256usize, 64] {
        let hist = build_histogram(&samples.values, bins).unwrap();
        let r = request(addr, "GET", &format!("/histogram?bins={bins}"), b"");
        assert_eq!(text(&r), doc::to_string(&hist));
        let r = request(addr, "GET", &format!("/threshold?bins={bins}"), b"");
        assert_eq!(text(&r), doc::to_string(&select_threshold(&hist).unwrap()));
    }

    // a draft grid passed inline: misalignment narrows the gap
    let aligned: semflash_core::classify::ThresholdResult =
        doc::from_str(text(&request(addr, "GET", "/threshold", b""))).unwrap();
    let mut draft = grid.clone();
    draft.corners[TL] = Point::new(grid.corners[TL].x + 10.0, grid.corners[TL].y);
    let r = request(addr, "GET", &format!("/threshold?grid={}", encode(&doc::to_string(&draft))), b"");
    assert_eq!(r.status, 200);
    let drifted: semflash_core::classify::ThresholdResult = doc::from_str(text(&r)).unwrap();
    assert!(drifted.gap < aligned.gap, "{} vs {}", drifted.gap, aligned.gap);

    let r = request(addr, "POST", "/preview", b"");
    assert_eq!((r.status, r.content_type.as_str()), (200, "image/png"));
    let preview = png::Decoder::new(std::io::Cursor::new(r.body)).read_info().unwrap();
    assert_eq!(preview.info().color_type, png::ColorType::Rgb);
    assert_eq!(preview.info().width as usize, mosaic.width());

    assert_eq!(request(addr, "DELETE", "/grid", b"").status, 405);
    assert_eq!(request(addr, "GET", "/nope", b"").status, 404);
    assert_eq!(request(addr, "GET", "/histogram?bins=x", b"").status, 400);

    assert_eq!(request(addr, "POST", "/shutdown", b"").status, 200);
    server.join().unwrap().unwrap();

    // the saved grid drives the next decode
    let outcome = run_decode(&PipelineConfig::load(&ds.config).unwrap()).unwrap();
    assert_eq!(outcome.report.unwrap().mismatched_bits, 0);
}

#[test]
fn concurrent_grid_mutation_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = small_dataset(tmp.path(), 32, 0.0, 1, DecodeMode::Merged);
    let cfg = PipelineConfig::load(&ds.config).unwrap();
    let state = ApiState::from_config(&cfg).unwrap();
    let grid = fs::read_to_string(&ds.grid).unwrap();

    let guard = state.try_begin_mutation().unwrap();
    assert!(state.try_begin_mutation().is_none());
    let r = state.handle(&Method::Put, "/grid", grid.as_bytes());
    assert_eq!(r.status, 409);
    // reads proceed while a mutation is in flight
    assert_eq!(state.handle(&Method::Get, "/grid", b"").status, 200);
    drop(guard);
    assert_eq!(state.handle(&Method::Put, "/grid", grid.as_bytes()).status, 200);
}

#[test]
fn port_in_use_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = small_dataset(tmp.path(), 33, 0.0, 1, DecodeMode::Merged);
    let cfg = PipelineConfig::load(&ds.config).unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let err = serve(&cfg, port, |_| panic!("should not bind")).unwrap_err();
    assert!(err.to_string().contains(&port.to_string()), "{err}");
}
