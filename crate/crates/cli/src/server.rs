//! Loopback HTTP API for the alignment UI.
//!
//! Reads run concurrently; grid mutations are serialized and a second
//! in-flight `PUT /grid` is rejected with 409 rather than queued.

use std::fs;
use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{OnceLock, RwLock};

use log::{info, warn};
use serde::Serialize;
use tiny_http::{Header, Method, Response};

use semflash_core::classify::{
    build_histogram, classify_cells, sample_cells, select_threshold, CellSamples, ClassifyError, Histogram,
};
use semflash_core::doc;
use semflash_core::grid::{cells_out_of_bounds, marker_pixels, GridSpec};
use semflash_core::imagery::{encode_png, encode_rgb_png, load_image, Frame};

use crate::config::{ClassifyOptions, PipelineConfig};
use crate::error::PipelineError;
use crate::pipeline::{acquisition_dir, run_stitch, MOSAIC_FILE};

/// Request bodies larger than this are refused.
pub const MAX_BODY: u64 = 1 << 20;

const BIT0_RGB: [u8; 3] = [0, 230, 0];
const BIT1_RGB: [u8; 3] = [255, 0, 200];

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, text: String) -> Self {
        Reply {
            status,
            content_type: "application/json",
            body: text.into_bytes(),
        }
    }

    fn png(body: Vec<u8>) -> Self {
        Reply {
            status: 200,
            content_type: "image/png",
            body,
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        let text = serde_json::to_string(&Body { error: message.into() }).expect("string serializes");
        Reply::json(status, text + "\n")
    }
}

pub struct ApiState {
    image: Frame,
    image_png: OnceLock<Vec<u8>>,
    grid: RwLock<Option<GridSpec>>,
    /// Where `PUT /grid` persists; `None` when the config embeds the grid.
    grid_path: Option<PathBuf>,
    classify: ClassifyOptions,
    mutating: AtomicBool,
}

/// Marks a grid mutation as in flight until dropped.
pub struct MutationGuard<'a>(&'a AtomicBool);

impl Drop for MutationGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl ApiState {
    pub fn new(image: Frame, grid: Option<GridSpec>, grid_path: Option<PathBuf>, classify: ClassifyOptions) -> Self {
        ApiState {
            image,
            image_png: OnceLock::new(),
            grid: RwLock::new(grid),
            grid_path,
            classify,
            mutating: AtomicBool::new(false),
        }
    }

    /// Uses the stitched mosaic of the first acquisition, stitching first if
    /// no previous run left one behind.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let path = acquisition_dir(&cfg.artifact_dir(), 0).join(MOSAIC_FILE);
        let image = if path.is_file() {
            load_image(&path).map_err(|e| PipelineError::Stage {
                stage: "load",
                message: format!("{}: {e}", path.display()),
            })?
        } else {
            info!("no stitched image at {}, stitching", path.display());
            run_stitch(cfg)?.swap_remove(0).mosaic.frame
        };
        let grid_path = cfg.grid_path();
        let grid = match &grid_path {
            Some(p) if !p.exists() => None,
            _ => Some(cfg.load_grid()?),
        };
        Ok(ApiState::new(image, grid, grid_path, cfg.classify.clone()))
    }

    pub fn image(&self) -> &Frame {
        &self.image
    }

    pub fn current_grid(&self) -> Option<GridSpec> {
        self.grid.read().expect("grid lock poisoned").clone()
    }

    pub fn try_begin_mutation(&self) -> Option<MutationGuard<'_>> {
        self.mutating
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| MutationGuard(&self.mutating))
    }

    pub fn handle(&self, method: &Method, url: &str, body: &[u8]) -> Reply {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let params: Vec<(String, String)> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        let param = |k: &str| params.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str());
        match (method, path) {
            (Method::Get, "/image") => match self.image_png.get() {
                Some(png) => Reply::png(png.clone()),
                None => match encode_png(&self.image) {
                    Ok(png) => Reply::png(self.image_png.get_or_init(|| png).clone()),
                    Err(e) => Reply::error(500, e.to_string()),
                },
            },
            (Method::Get, "/grid") => match self.current_grid() {
                Some(g) => Reply::json(200, doc::to_string(&g)),
                None => Reply::error(404, "no grid has been saved yet"),
            },
            (Method::Put, "/grid") => self.put_grid(body),
            (Method::Get, "/cells") => self
                .selected(param("grid"))
                .and_then(|g| self.samples(&g))
                .map(|s| Reply::json(200, doc::to_string(&s)))
                .unwrap_or_else(|r| r),
            (Method::Get, "/histogram") => self
                .histogram(param("grid"), param("bins"))
                .map(|(_, h)| Reply::json(200, doc::to_string(&h)))
                .unwrap_or_else(|r| r),
            (Method::Get, "/threshold") => self
                .histogram(param("grid"), param("bins"))
                .and_then(|(_, h)| select_threshold(&h).map_err(classify_reply))
                .map(|t| Reply::json(200, doc::to_string(&t)))
                .unwrap_or_else(|r| r),
            (Method::Post, "/preview") => {
                let grid = if body.iter().all(u8::is_ascii_whitespace) {
                    None
                } else {
                    match std::str::from_utf8(body) {
                        Ok(s) => Some(s),
                        Err(_) => return Reply::error(400, "body is not UTF-8"),
                    }
                };
                self.preview(grid, param("bins")).unwrap_or_else(|r| r)
            }
            (_, "/image" | "/grid" | "/cells" | "/histogram" | "/threshold" | "/preview" | "/shutdown") => {
                Reply::error(405, format!("{method} not allowed on {path}"))
            }
            _ => Reply::error(404, format!("no such endpoint {path}")),
        }
    }

    fn put_grid(&self, body: &[u8]) -> Reply {
        let Some(_guard) = self.try_begin_mutation() else {
            return Reply::error(409, "another grid update is in progress");
        };
        let grid = match parse_grid(std::str::from_utf8(body).unwrap_or("")) {
            Ok(g) => g,
            Err(r) => return r,
        };
        if let Err(r) = self.check(&grid) {
            return r;
        }
        let Some(path) = &self.grid_path else {
            return Reply::error(409, "the pipeline config embeds its grid; point `grid` at a file to edit it");
        };
        let text = doc::to_string(&grid);
        let tmp = path.with_extension("json.tmp");
        if let Err(e) = fs::write(&tmp, &text).and_then(|_| fs::rename(&tmp, path)) {
            return Reply::error(500, format!("cannot save {}: {e}", path.display()));
        }
        *self.grid.write().expect("grid lock poisoned") = Some(grid);
        info!("grid saved to {}", path.display());
        Reply::json(200, text)
    }

    fn check(&self, grid: &GridSpec) -> Result<(), Reply> {
        grid.validate().map_err(|e| Reply::error(422, e.to_string()))?;
        let out = cells_out_of_bounds(grid, self.image.width(), self.image.height());
        if let Some(&(r, c)) = out.first() {
            return Err(Reply::error(
                422,
                format!("{} cell centers fall outside the image, first at ({r}, {c})", out.len()),
            ));
        }
        Ok(())
    }

    /// `grid=current` (or absent) selects the saved grid; anything else is
    /// parsed as an inline `grid.v1` document.
    fn selected(&self, grid: Option<&str>) -> Result<GridSpec, Reply> {
        let grid = match grid {
            None | Some("current") => self
                .current_grid()
                .ok_or_else(|| Reply::error(404, "no grid has been saved yet"))?,
            Some(text) => parse_grid(text)?,
        };
        self.check(&grid)?;
        Ok(grid)
    }

    fn samples(&self, grid: &GridSpec) -> Result<CellSamples, Reply> {
        sample_cells(&self.image, grid).map_err(classify_reply)
    }

    fn bins(&self, bins: Option<&str>) -> Result<usize, Reply> {
        match bins {
            None => Ok(self.classify.bins),
            Some(b) => b
                .parse()
                .map_err(|_| Reply::error(400, format!("bins must be a positive integer, got {b:?}"))),
        }
    }

    fn histogram(&self, grid: Option<&str>, bins: Option<&str>) -> Result<(CellSamples, Histogram), Reply> {
        let bins = self.bins(bins)?;
        let samples = self.samples(&self.selected(grid)?)?;
        let hist = build_histogram(&samples.values, bins).map_err(classify_reply)?;
        Ok((samples, hist))
    }

    fn preview(&self, grid: Option<&str>, bins: Option<&str>) -> Result<Reply, Reply> {
        let bins = self.bins(bins)?;
        let grid = match grid {
            None => self.selected(None)?,
            Some(text) => {
                let g = parse_grid(text)?;
                self.check(&g)?;
                g
            }
        };
        let samples = self.samples(&grid)?;
        let hist = build_histogram(&samples.values, bins).map_err(classify_reply)?;
        let t = select_threshold(&hist).map_err(classify_reply)?;
        let bits = classify_cells(&samples, t.threshold, self.classify.polarity);

        let (w, h) = (self.image.width(), self.image.height());
        let max = self.image.depth().max_value() as u32;
        let mut rgb = Vec::with_capacity(w * h * 3);
        for &v in self.image.pixels() {
            let g = ((v as u32 * 255 + max / 2) / max) as u8;
            rgb.extend_from_slice(&[g, g, g]);
        }
        for (i, center) in grid.cell_centers().into_iter().enumerate() {
            let color = if bits.bits()[i] == 0 { BIT0_RGB } else { BIT1_RGB };
            for (x, y) in marker_pixels(center, grid.window_radius, w, h) {
                let at = (y * w + x) * 3;
                rgb[at..at + 3].copy_from_slice(&color);
            }
        }
        encode_rgb_png(w, h, &rgb)
            .map(Reply::png)
            .map_err(|e| Reply::error(500, e.to_string()))
    }
}

fn parse_grid(text: &str) -> Result<GridSpec, Reply> {
    doc::from_str(text).map_err(|e| Reply::error(400, format!("not a grid document: {e}")))
}

fn classify_reply(e: ClassifyError) -> Reply {
    Reply::error(422, e.to_string())
}

pub struct ApiServer {
    http: tiny_http::Server,
    state: ApiState,
}

impl ApiServer {
    /// Binds to `127.0.0.1:port`; port 0 picks a free one.
    pub fn bind(state: ApiState, port: u16) -> Result<Self, PipelineError> {
        let http = tiny_http::Server::http(("127.0.0.1", port)).map_err(|e| PipelineError::Stage {
            stage: "serve",
            message: format!("cannot listen on 127.0.0.1:{port}: {e}"),
        })?;
        Ok(ApiServer { http, state })
    }

    pub fn addr(&self) -> SocketAddr {
        self.http
            .server_addr()
            .to_ip()
            .expect("bound to an IP socket")
    }

    /// Serves until `POST /shutdown`.
    pub fn run(self) {
        let (http, state) = (&self.http, &self.state);
        std::thread::scope(|scope| {
            for mut req in http.incoming_requests() {
                scope.spawn(move || {
                    let mut body = Vec::new();
                    let read = req.as_reader().take(MAX_BODY + 1).read_to_end(&mut body);
                    let shutdown = *req.method() == Method::Post && req.url() == "/shutdown";
                    let reply = if read.is_err() {
                        Reply::error(400, "cannot read request body")
                    } else if body.len() as u64 > MAX_BODY {
                        Reply::error(413, format!("body exceeds {MAX_BODY} bytes"))
                    } else if shutdown {
                        Reply::json(200, "{\"status\": \"shutting down\"}\n".into())
                    } else {
                        state.handle(req.method(), req.url(), &body)
                    };
                    let header = Header::from_bytes("Content-Type", reply.content_type).expect("valid header");
                    let response = Response::from_data(reply.body)
                        .with_status_code(reply.status)
                        .with_header(header);
                    if let Err(e) = req.respond(response) {
                        warn!("cannot send response: {e}");
                    }
                    if shutdown {
                        http.unblock();
                    }
                });
            }
        });
        info!("server stopped");
    }
}

/// Stitches if needed, then serves the API until shut down.
pub fn serve(cfg: &PipelineConfig, port: u16, on_ready: impl FnOnce(SocketAddr)) -> Result<(), PipelineError> {
    cfg.validate()?;
    let server = ApiServer::bind(ApiState::from_config(cfg)?, port)?;
    on_ready(server.addr());
    server.run();
    Ok(())
}
