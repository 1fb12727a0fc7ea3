use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};
use tiny_http::{Header, Method, Response, Server};

use super::wire::{decode_request, EmbedRequest, EmbedResponse};
use super::{embed_batch, BlackBoxEncoder};
use crate::data::ImageTensor;
use crate::error::{Error, Result};

pub type QueryHandler = Arc<dyn Fn(&[ImageTensor]) -> Result<EmbedResponse> + Send + Sync>;

/// A single-threaded HTTP server for the wire protocol. Used both to expose
/// a local encoder and, with a hand-written handler, as a test mock.
/// Stops when dropped.
pub struct EncoderServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl EncoderServer {
    pub fn start(bind: &str, token: Option<String>, handler: QueryHandler) -> Result<Self> {
        let server = Server::http(bind).map_err(|e| Error::Transport { attempts: 1, message: e.to_string() })?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::InvalidParameter(format!("{bind} is not an IP address")))?;
        let server = Arc::new(server);
        let worker = {
            let server = Arc::clone(&server);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, token.as_deref(), &handler);
                }
            })
        };
        debug!("encoder server listening on {addr}");
        Ok(Self { server, addr, worker: Some(worker) })
    }

    /// Serves `enc` unchanged: images must already match its resolution.
    pub fn serve(bind: &str, token: Option<String>, enc: Arc<dyn BlackBoxEncoder>) -> Result<Self> {
        let handler: QueryHandler = Arc::new(move |images: &[ImageTensor]| {
            Ok(EmbedResponse { features: embed_batch(enc.as_ref(), images)?, dim: enc.dim() })
        });
        Self::start(bind, token, handler)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/embed", self.addr)
    }

    /// Blocks until the server is stopped from another thread.
    pub fn join(mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for EncoderServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn error_body(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn handle(mut request: tiny_http::Request, token: Option<&str>, handler: &QueryHandler) {
    let response = if *request.method() != Method::Post {
        json_response(405, error_body("POST only"))
    } else if !authorized(&request, token) {
        json_response(401, error_body("missing or invalid bearer token"))
    } else {
        let mut body = String::new();
        match request.as_reader().read_to_string(&mut body) {
            Err(e) => json_response(400, error_body(&e.to_string())),
            Ok(_) => respond(&body, handler),
        }
    };
    if let Err(e) = request.respond(response) {
        warn!("failed to send response: {e}");
    }
}

fn authorized(request: &tiny_http::Request, token: Option<&str>) -> bool {
    let Some(token) = token else { return true };
    let expected = format!("Bearer {token}");
    request
        .headers()
        .iter()
        .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected)
}

fn respond(body: &str, handler: &QueryHandler) -> Response<std::io::Cursor<Vec<u8>>> {
    let images = serde_json::from_str::<EmbedRequest>(body)
        .map_err(Error::from)
        .and_then(|req| decode_request(&req));
    let images = match images {
        Ok(images) => images,
        Err(e) => return json_response(400, error_body(&e.to_string())),
    };
    match handler(&images) {
        Ok(resp) => json_response(200, serde_json::to_string(&resp).expect("response serializes")),
        Err(e @ (Error::DimensionMismatch { .. } | Error::InvalidImage(_) | Error::Protocol(_))) => {
            json_response(400, error_body(&e.to_string()))
        }
        Err(e) => json_response(500, error_body(&e.to_string())),
    }
}
