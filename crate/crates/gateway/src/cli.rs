//! The `oaas` command line. Every command except `serve` is one HTTP request.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reqwest::Method;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "oaas", version, about = "Object-as-a-Service platform gateway and client")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "OAAS_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    /// Response bodies exactly as the gateway sent them.
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway.
    Serve {
        /// TOML config file. `OAAS_*` variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Deploy a class package (YAML or JSON).
    Deploy { file: PathBuf },
    #[command(subcommand)]
    Class(ClassCmd),
    #[command(subcommand)]
    Object(ObjectCmd),
    /// Invoke a function on an object.
    Invoke {
        id: String,
        #[arg(value_name = "FN")]
        function: String,
        /// JSON payload file. Anything that is not JSON is sent as raw bytes.
        #[arg(long)]
        payload: Option<PathBuf>,
        #[arg(long = "async")]
        is_async: bool,
    },
    /// Status of an asynchronous invocation.
    Task { task_id: String },
    #[command(subcommand)]
    Blob(BlobCmd),
    #[command(subcommand)]
    Runtime(RuntimeCmd),
    #[command(subcommand)]
    Template(TemplateCmd),
    Metrics,
}

#[derive(Debug, Subcommand)]
pub enum ClassCmd {
    List,
    Get { name: String },
}

#[derive(Debug, Subcommand)]
pub enum ObjectCmd {
    Create {
        class: String,
        /// Initial state as a JSON object file.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    Get { id: String },
}

#[derive(Debug, Subcommand)]
pub enum BlobCmd {
    Put { id: String, key: String, file: PathBuf },
    Get { id: String, key: String, file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum RuntimeCmd {
    List,
}

#[derive(Debug, Subcommand)]
pub enum TemplateCmd {
    /// Register a class runtime template (YAML or JSON).
    Add { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub content_type: Option<&'static str>,
    pub body: Option<Vec<u8>>,
}

impl ApiRequest {
    fn get(path: String) -> Self {
        ApiRequest {
            method: Method::GET,
            path,
            content_type: None,
            body: None,
        }
    }

    fn send(method: Method, path: String, content_type: &'static str, body: Vec<u8>) -> Self {
        ApiRequest {
            method,
            path,
            content_type: Some(content_type),
            body: Some(body),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn seg(s: &str) -> String {
    // Path segments are identifiers in practice; escape the few characters
    // that would change the route.
    s.replace('%', "%25").replace('/', "%2F").replace('?', "%3F").replace('#', "%23")
}

impl Command {
    /// The single HTTP request this command makes. `None` for `serve`.
    pub fn request(&self) -> Result<Option<ApiRequest>> {
        const JSON: &str = "application/json";
        const BYTES: &str = "application/octet-stream";
        let req = match self {
            Command::Serve { .. } => return Ok(None),
            Command::Deploy { file } => {
                let ct = if file.extension().is_some_and(|e| e == "json") {
                    JSON
                } else {
                    "application/yaml"
                };
                ApiRequest::send(Method::POST, "/classes".into(), ct, read(file)?)
            }
            Command::Class(ClassCmd::List) => ApiRequest::get("/classes".into()),
            Command::Class(ClassCmd::Get { name }) => ApiRequest::get(format!("/classes/{}", seg(name))),
            Command::Object(ObjectCmd::Create { class, state }) => {
                let body = match state {
                    Some(f) => read(f)?,
                    None => b"{}".to_vec(),
                };
                ApiRequest::send(Method::POST, format!("/classes/{}/objects", seg(class)), JSON, body)
            }
            Command::Object(ObjectCmd::Get { id }) => ApiRequest::get(format!("/objects/{}", seg(id))),
            Command::Invoke {
                id,
                function,
                payload,
                is_async,
            } => {
                let verb = if *is_async { "invoke-async" } else { "invoke" };
                let path = format!("/objects/{}/{verb}/{}", seg(id), seg(function));
                let (ct, body) = match payload {
                    Some(f) => {
                        let bytes = read(f)?;
                        let ct = if serde_json::from_slice::<Value>(&bytes).is_ok() { JSON } else { BYTES };
                        (ct, bytes)
                    }
                    None => (JSON, b"{}".to_vec()),
                };
                ApiRequest::send(Method::POST, path, ct, body)
            }
            Command::Task { task_id } => ApiRequest::get(format!("/tasks/{}", seg(task_id))),
            Command::Blob(BlobCmd::Put { id, key, file }) => ApiRequest::send(
                Method::PUT,
                format!("/objects/{}/blobs/{}", seg(id), seg(key)),
                BYTES,
                read(file)?,
            ),
            Command::Blob(BlobCmd::Get { id, key, .. }) => {
                ApiRequest::get(format!("/objects/{}/blobs/{}", seg(id), seg(key)))
            }
            Command::Runtime(RuntimeCmd::List) => ApiRequest::get("/runtimes".into()),
            Command::Template(TemplateCmd::Add { file }) => {
                ApiRequest::send(Method::POST, "/templates".into(), "application/yaml", read(file)?)
            }
            Command::Metrics => ApiRequest::get("/metrics".into()),
        };
        Ok(Some(req))
    }
}

pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn execute(&self, req: &ApiRequest) -> Result<ApiResponse, reqwest::Error> {
        let mut rb = self.http.request(req.method.clone(), format!("{}{}", self.base, req.path));
        if let Some(ct) = req.content_type {
            rb = rb.header(reqwest::header::CONTENT_TYPE, ct);
        }
        if let Some(body) = &req.body {
            rb = rb.body(body.clone());
        }
        let resp = rb.send().await?;
        let status = resp.status().as_u16();
        let body = resp.bytes().await?.to_vec();
        Ok(ApiResponse { status, body })
    }
}

/// `code: message` from a failed response.
pub fn error_line(resp: &ApiResponse) -> String {
    let parsed: Option<Value> = serde_json::from_slice(&resp.body).ok();
    if let Some(e) = parsed.as_ref().and_then(|v| v.get("error")) {
        let code = e.get("code").and_then(Value::as_str).unwrap_or("Error");
        let message = e.get("message").and_then(Value::as_str).unwrap_or("");
        return format!("{code}: {message}");
    }
    if let Some(errors) = parsed.as_ref().and_then(|v| v.get("errors")).and_then(Value::as_array) {
        let msgs: Vec<String> = errors
            .iter()
            .map(|d| {
                format!(
                    "{}: {}",
                    d.get("path").and_then(Value::as_str).unwrap_or(""),
                    d.get("message").and_then(Value::as_str).unwrap_or("")
                )
            })
            .collect();
        return format!("ValidationFailed: {}", msgs.join("; "));
    }
    let text = String::from_utf8_lossy(&resp.body);
    format!("Http{}: {}", resp.status, text.trim())
}

fn pretty(body: &[u8]) -> String {
    match serde_json::from_slice::<Value>(body) {
        Ok(v) => serde_json::to_string_pretty(&v).expect("value serializes"),
        Err(_) => String::from_utf8_lossy(body).into_owned(),
    }
}

fn str_at<'a>(v: &'a Value, ptr: &str) -> &'a str {
    v.pointer(ptr).and_then(Value::as_str).unwrap_or("-")
}

/// Human-readable rendering of a successful response.
pub fn render_text(cmd: &Command, body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap_or(Value::Null);
    match cmd {
        Command::Deploy { .. } => {
            let mut out = format!(
                "deployed {} class(es) in {:.1} ms\n",
                v["classesDeployed"],
                v["elapsedMs"].as_f64().unwrap_or(0.0)
            );
            if let Some(classes) = v["classes"].as_object() {
                for (name, c) in classes {
                    out += &format!("  {name} -> {}\n", str_at(c, "/templateSelected"));
                    for w in c["warnings"].as_array().into_iter().flatten() {
                        out += &format!("    warning: {}\n", w.as_str().unwrap_or_default());
                    }
                }
            }
            out
        }
        Command::Class(ClassCmd::List) => v
            .as_array()
            .into_iter()
            .flatten()
            .map(|c| match c["parent"].as_str() {
                Some(p) => format!("{} (extends {p})\n", str_at(c, "/name")),
                None => format!("{}\n", str_at(c, "/name")),
            })
            .collect(),
        Command::Runtime(RuntimeCmd::List) => {
            let mut out = format!("{:<24} {:<24} {:>8} {:>9}  {}\n", "CLASS", "TEMPLATE", "REPLICAS", "IN_FLIGHT", "STATE");
            for r in v.as_array().into_iter().flatten() {
                out += &format!(
                    "{:<24} {:<24} {:>8} {:>9}  {}\n",
                    str_at(r, "/cls"),
                    str_at(r, "/templateName"),
                    r["replicas"],
                    r["inFlight"],
                    str_at(r, "/state")
                );
            }
            out
        }
        Command::Invoke { is_async: true, .. } => format!("{}\n", str_at(&v, "/taskId")),
        Command::Metrics => String::from_utf8_lossy(body).into_owned(),
        _ => format!("{}\n", pretty(body)),
    }
}

/// Runs a client command and returns the process exit code.
pub async fn run_client(cli: &Cli) -> i32 {
    match run_client_inner(cli).await {
        Ok(()) => 0,
        Err(line) => {
            eprintln!("error: {line}");
            1
        }
    }
}

async fn run_client_inner(cli: &Cli) -> Result<(), String> {
    let req = cli
        .command
        .request()
        .map_err(|e| format!("BadInput: {e:#}"))?
        .expect("serve is handled by the caller");
    let resp = Client::new(&cli.server)
        .execute(&req)
        .await
        .map_err(|e| format!("Unreachable: {e}"))?;
    if !(200..300).contains(&resp.status) {
        return Err(error_line(&resp));
    }
    let mut stdout = std::io::stdout().lock();
    let written = match (&cli.command, cli.output) {
        (Command::Blob(BlobCmd::Get { file, .. }), out) => {
            std::fs::write(file, &resp.body).map_err(|e| format!("BadOutput: {}: {e}", file.display()))?;
            match out {
                Output::Json => Ok(()),
                Output::Text => writeln!(stdout, "wrote {} bytes to {}", resp.body.len(), file.display()),
            }
        }
        (Command::Blob(BlobCmd::Put { .. }), Output::Text) => writeln!(stdout, "stored"),
        (_, Output::Json) => stdout.write_all(&resp.body),
        (cmd, Output::Text) => stdout.write_all(render_text(cmd, &resp.body).as_bytes()),
    };
    written.map_err(|e| format!("BadOutput: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("oaas").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn commands_map_to_routes() {
        let cases: &[(&[&str], Method, &str)] = &[
            (&["class", "list"], Method::GET, "/classes"),
            (&["class", "get", "Image"], Method::GET, "/classes/Image"),
            (&["object", "create", "Image"], Method::POST, "/classes/Image/objects"),
            (&["object", "get", "o1"], Method::GET, "/objects/o1"),
            (&["invoke", "o1", "resize"], Method::POST, "/objects/o1/invoke/resize"),
            (&["invoke", "o1", "resize", "--async"], Method::POST, "/objects/o1/invoke-async/resize"),
            (&["task", "t1"], Method::GET, "/tasks/t1"),
            (&["blob", "get", "o1", "image", "out.png"], Method::GET, "/objects/o1/blobs/image"),
            (&["runtime", "list"], Method::GET, "/runtimes"),
            (&["metrics"], Method::GET, "/metrics"),
        ];
        for (args, method, path) in cases {
            let req = parse(args).command.request().unwrap().unwrap();
            assert_eq!((&req.method, req.path.as_str()), (method, *path), "{args:?}");
        }
        assert!(parse(&["serve"]).command.request().unwrap().is_none());
    }

    #[test]
    fn global_flags_anywhere() {
        let cli = parse(&["object", "get", "x", "--output", "json", "--server", "http://h:1"]);
        assert_eq!(cli.output, Output::Json);
        assert_eq!(cli.server, "http://h:1");
    }

    #[test]
    fn ids_cannot_escape_their_segment() {
        let req = parse(&["object", "get", "../classes"]).command.request().unwrap().unwrap();
        assert_eq!(req.path, "/objects/..%2Fclasses");
    }

    #[test]
    fn error_lines() {
        let e = ApiResponse {
            status: 404,
            body: br#"{"error":{"code":"NotFound","message":"object x not found"}}"#.to_vec(),
        };
        assert_eq!(error_line(&e), "NotFound: object x not found");
        let v = ApiResponse {
            status: 422,
            body: br#"{"errors":[{"path":"A.parent","kind":"unresolvedParent","message":"no class Nope"}],"warnings":[]}"#
                .to_vec(),
        };
        assert_eq!(error_line(&v), "ValidationFailed: A.parent: no class Nope");
        let raw = ApiResponse {
            status: 500,
            body: b"boom".to_vec(),
        };
        assert_eq!(error_line(&raw), "Http500: boom");
    }
}
