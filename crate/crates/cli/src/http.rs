//! Blocking HTTP client for a model server speaking the `/v1/*` JSON API.

use std::time::Duration;

use pearl::backend::{BackendError, Endpoint, Request, Transport};
use reqwest::blocking::Client;
use reqwest::header::CONTENT_TYPE;
use serde_json::Value;

pub struct HttpTransport {
    base: String,
    client: Client,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> anyhow::Result<Self> {
        let client = Client::builder().timeout(timeout).build()?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// `GET /v1/<path>` as JSON.
    pub fn get(&self, path: &str) -> Result<Value, String> {
        let url = format!("{}/v1/{path}", self.base);
        let resp = self.client.get(&url).send().map_err(|e| format!("{url}: {e}"))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("{url}: {e}"))?;
        if !status.is_success() {
            return Err(format!("{url}: HTTP {status}: {}", snippet(&text)));
        }
        serde_json::from_str(&text).map_err(|e| format!("{url}: {e}"))
    }

    fn url_for(&self, request: &Request<'_>, body: &mut Value) -> String {
        let mut url = format!("{}{}", self.base, request.endpoint.path());
        // The tagger variant travels as a query parameter.
        if request.endpoint == Endpoint::Tag {
            if let Some(Value::String(v)) = body.as_object_mut().and_then(|m| m.remove("variant")) {
                url = format!("{url}?variant={v}");
            }
        }
        url
    }
}

fn snippet(text: &str) -> String {
    let t = text.trim();
    match t.char_indices().nth(200) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &Request<'_>) -> Result<Value, BackendError> {
        let endpoint = request.endpoint;
        let mut body = request.wire_body();
        let url = self.url_for(request, &mut body);
        let unavailable = |reason: String| BackendError::Unavailable { endpoint, reason };
        let resp = self
            .client
            .post(&url)
            .header(CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(&body).expect("request bodies serialize"))
            .send()
            .map_err(|e| unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| unavailable(format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(unavailable(format!("{url}: HTTP {status}: {}", snippet(&text))));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse {
            endpoint,
            reason: format!("{url}: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pearl::backend::{Session, TagRequest};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned response per accepted connection and reports each
    /// request line and body.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut length = 0;
                loop {
                    let mut header = String::new();
                    reader.read_line(&mut header).unwrap();
                    if header.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = header.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                tx.send((request_line.trim().to_string(), String::from_utf8(buf).unwrap())).unwrap();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (addr, rx)
    }

    fn image() -> image::RgbImage {
        image::RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8, y as u8, 9]))
    }

    #[test]
    fn posts_wire_body_and_parses_response() {
        let (url, rx) = serve(vec![(200, r#"{"answer": "yes"}"#)]);
        let http = HttpTransport::new(&url, Duration::from_secs(5)).unwrap();
        let img = image();
        let answer = Session::new(&http).vqa(&img, "Is there a table in the image?").unwrap();
        assert_eq!(answer, "yes");
        let (line, body) = rx.recv().unwrap();
        assert_eq!(line, "POST /v1/vqa HTTP/1.1");
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["question"], "Is there a table in the image?");
        assert!(body["image_b64"].as_str().is_some_and(|s| !s.is_empty()));
        assert!(body.get("image_sha256").is_none());
    }

    #[test]
    fn tag_variant_moves_to_query() {
        let (url, rx) = serve(vec![(200, r#"{"tags": [{"tag": "table", "score": 0.9}]}"#)]);
        let http = HttpTransport::new(&url, Duration::from_secs(5)).unwrap();
        let img = image();
        let req = TagRequest {
            threshold_multiplier: 1.0,
            variant: Some("scp".into()),
        };
        http.call(&Request::new(Endpoint::Tag, &req, Some(&img))).unwrap();
        let (line, body) = rx.recv().unwrap();
        assert_eq!(line, "POST /v1/tag?variant=scp HTTP/1.1");
        assert!(!body.contains("variant"));
    }

    #[test]
    fn server_errors_name_the_endpoint() {
        let (url, _rx) = serve(vec![(501, r#"{"detail": "not configured"}"#), (200, "not json")]);
        let http = HttpTransport::new(&url, Duration::from_secs(5)).unwrap();
        let img = image();
        let err = Session::new(&http).vqa(&img, "q").unwrap_err();
        assert!(matches!(err, BackendError::Unavailable { endpoint: Endpoint::Vqa, .. }));
        assert!(err.to_string().contains("501"), "{err}");
        let err = Session::new(&http).vqa(&img, "q").unwrap_err();
        assert!(matches!(err, BackendError::InvalidResponse { .. }), "{err}");
    }

    #[test]
    fn unreachable_server_names_url() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let url = format!("http://127.0.0.1:{port}");
        let http = HttpTransport::new(&url, Duration::from_secs(2)).unwrap();
        let err = http.get("health").unwrap_err();
        assert!(err.contains(&url), "{err}");
    }
}
