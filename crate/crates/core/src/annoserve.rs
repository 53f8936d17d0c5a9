//! HTTP service for reviewing and correcting region correspondences.
//!
//! Each pair's annotation lives in `annotations/pair_XXXX.json` under the
//! dataset directory. Writes are compare-and-set on a revision number and
//! land through a temp file and rename.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::regionmap::RegionMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Auto,
    InReview,
    Approved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

/// Request to treat several regions of one image as a single region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionEdit {
    pub side: Side,
    pub merge: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub pair_id: usize,
    pub corr: CorrSet,
    #[serde(default)]
    pub region_edits: Vec<RegionEdit>,
    pub status: Status,
    pub revision: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrUpdate {
    pub base_revision: u64,
    pub corr: CorrSet,
    #[serde(default)]
    pub region_edits: Vec<RegionEdit>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatusUpdate {
    /// When present, the transition applies only at this revision.
    #[serde(default)]
    pub base_revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSummary {
    pub id: usize,
    pub status: Status,
    pub revision: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDetail {
    #[serde(flatten)]
    pub doc: AnnotationDoc,
    pub region_ids_a: Vec<u32>,
    pub region_ids_b: Vec<u32>,
    /// Relative URLs of the images and label maps served for this pair.
    pub links: PairLinks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairLinks {
    pub image_a: String,
    pub image_b: String,
    pub colored_a: Option<String>,
    pub colored_b: Option<String>,
    pub regions_a: Option<String>,
    pub regions_b: Option<String>,
}

struct Entry {
    doc: Mutex<AnnotationDoc>,
    path: PathBuf,
}

pub struct AppState {
    manifest: Manifest,
    entries: Vec<Entry>,
}

impl AppState {
    /// Loads the manifest in `dataset` and every stored annotation, creating
    /// missing ones from the manifest's correspondences.
    pub fn open(dataset: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dataset.join("manifest.jsonl"))?;
        let dir = dataset.join("annotations");
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        let mut entries = Vec::with_capacity(manifest.records.len());
        for (i, rec) in manifest.records.iter().enumerate() {
            let path = dir.join(format!("pair_{i:04}.json"));
            let doc = if path.exists() {
                crate::io::read_json::<AnnotationDoc>(&path)?
            } else {
                let corr = match &rec.corr {
                    Some(c) => CorrSet::load(&manifest.resolve(c))?,
                    None => CorrSet::default(),
                };
                let doc = AnnotationDoc {
                    pair_id: i,
                    corr,
                    region_edits: Vec::new(),
                    status: Status::Auto,
                    revision: 0,
                };
                persist(&path, &doc)?;
                doc
            };
            entries.push(Entry {
                doc: Mutex::new(doc),
                path,
            });
        }
        Ok(Self { manifest, entries })
    }

    fn entry(&self, id: usize) -> std::result::Result<&Entry, ApiError> {
        self.entries
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no pair with id {id}")))
    }

    fn regions(&self, id: usize, side: Side) -> Result<Option<RegionMap>> {
        let rec = &self.manifest.records[id];
        let rel = match side {
            Side::A => &rec.regions_a,
            Side::B => &rec.regions_b,
        };
        rel.as_ref()
            .map(|r| RegionMap::load(&self.manifest.resolve(r)))
            .transpose()
    }
}

/// Writes `doc` beside `path` and renames it into place.
fn persist(path: &Path, doc: &AnnotationDoc) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let bytes = serde_json::to_vec_pretty(doc)?;
    std::fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
    revision: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            revision: None,
        }
    }

    fn conflict(message: impl Into<String>, current: u64) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            message: message.into(),
            revision: Some(current),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "error": self.message,
            "current_revision": self.revision,
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;
type Shared = Arc<AppState>;

async fn list_pairs(State(st): State<Shared>) -> Json<Vec<PairSummary>> {
    let mut out = Vec::with_capacity(st.entries.len());
    for (id, e) in st.entries.iter().enumerate() {
        let d = e.doc.lock().await;
        out.push(PairSummary {
            id,
            status: d.status,
            revision: d.revision,
        });
    }
    Json(out)
}

fn ids(m: &Option<RegionMap>) -> Vec<u32> {
    m.as_ref().map(|m| m.ids().collect()).unwrap_or_default()
}

async fn get_pair(State(st): State<Shared>, UrlPath(id): UrlPath<usize>) -> ApiResult<Json<PairDetail>> {
    let doc = st.entry(id)?.doc.lock().await.clone();
    let rec = &st.manifest.records[id];
    let base = format!("/pairs/{id}");
    let links = PairLinks {
        image_a: format!("{base}/image/a"),
        image_b: format!("{base}/image/b"),
        colored_a: rec.colored_a.as_ref().map(|_| format!("{base}/colored/a")),
        colored_b: rec.colored_b.as_ref().map(|_| format!("{base}/colored/b")),
        regions_a: rec.regions_a.as_ref().map(|_| format!("{base}/regions/a")),
        regions_b: rec.regions_b.as_ref().map(|_| format!("{base}/regions/b")),
    };
    Ok(Json(PairDetail {
        doc,
        region_ids_a: ids(&st.regions(id, Side::A)?),
        region_ids_b: ids(&st.regions(id, Side::B)?),
        links,
    }))
}

fn png_response(path: PathBuf) -> ApiResult<Response> {
    let bytes = std::fs::read(&path)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

fn side_of(s: &str) -> ApiResult<Side> {
    match s {
        "a" => Ok(Side::A),
        "b" => Ok(Side::B),
        _ => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown side `{s}`"))),
    }
}

fn pick(side: Side, a: &Option<String>, b: &Option<String>, what: &str) -> ApiResult<String> {
    match side {
        Side::A => a.clone(),
        Side::B => b.clone(),
    }
    .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("pair has no {what}")))
}

async fn get_image(State(st): State<Shared>, UrlPath((id, side)): UrlPath<(usize, String)>) -> ApiResult<Response> {
    st.entry(id)?;
    let rec = &st.manifest.records[id];
    let rel = match side_of(&side)? {
        Side::A => rec.img_a.clone(),
        Side::B => rec.img_b.clone(),
    };
    png_response(st.manifest.resolve(&rel))
}

async fn get_colored(State(st): State<Shared>, UrlPath((id, side)): UrlPath<(usize, String)>) -> ApiResult<Response> {
    st.entry(id)?;
    let rec = &st.manifest.records[id];
    let rel = pick(side_of(&side)?, &rec.colored_a, &rec.colored_b, "colored image")?;
    png_response(st.manifest.resolve(&rel))
}

async fn get_regions(State(st): State<Shared>, UrlPath((id, side)): UrlPath<(usize, String)>) -> ApiResult<Response> {
    st.entry(id)?;
    let rec = &st.manifest.records[id];
    let rel = pick(side_of(&side)?, &rec.regions_a, &rec.regions_b, "region map")?;
    png_response(st.manifest.resolve(&rel))
}

fn check_ids(corr: &CorrSet, edits: &[RegionEdit], a: &[u32], b: &[u32]) -> ApiResult<()> {
    let bad = |side: &str, id: u32| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("region {id} does not exist in image {side}"),
        )
    };
    for p in &corr.pairs {
        if !a.contains(&p.a) {
            return Err(bad("a", p.a));
        }
        if !b.contains(&p.b) {
            return Err(bad("b", p.b));
        }
        if !(p.score.is_finite()) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "pair scores must be finite"));
        }
    }
    for &id in &corr.unmatched_a {
        if !a.contains(&id) {
            return Err(bad("a", id));
        }
    }
    for &id in &corr.unmatched_b {
        if !b.contains(&id) {
            return Err(bad("b", id));
        }
    }
    for e in edits {
        let (name, known) = match e.side {
            Side::A => ("a", a),
            Side::B => ("b", b),
        };
        if let Some(&id) = e.merge.iter().find(|id| !known.contains(id)) {
            return Err(bad(name, id));
        }
    }
    Ok(())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn put_corr(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    body: axum::body::Bytes,
) -> ApiResult<Json<AnnotationDoc>> {
    let entry = st.entry(id)?;
    let update: CorrUpdate = parse_body(&body)?;
    let a = ids(&st.regions(id, Side::A)?);
    let b = ids(&st.regions(id, Side::B)?);
    check_ids(&update.corr, &update.region_edits, &a, &b)?;
    let mut doc = entry.doc.lock().await;
    if doc.revision != update.base_revision {
        return Err(ApiError::conflict(
            format!("base revision {} is stale", update.base_revision),
            doc.revision,
        ));
    }
    if doc.status == Status::Approved {
        return Err(ApiError::conflict("pair is approved; reopen it before editing", doc.revision));
    }
    let mut next = doc.clone();
    next.corr = update.corr;
    next.region_edits = update.region_edits;
    next.status = Status::InReview;
    next.revision += 1;
    persist(&entry.path, &next)?;
    *doc = next.clone();
    Ok(Json(next))
}

async fn transition(st: &AppState, id: usize, body: &[u8], to: Status) -> ApiResult<Json<AnnotationDoc>> {
    let entry = st.entry(id)?;
    let update: StatusUpdate = if body.is_empty() {
        StatusUpdate::default()
    } else {
        parse_body(body)?
    };
    let mut doc = entry.doc.lock().await;
    if let Some(base) = update.base_revision {
        if base != doc.revision {
            return Err(ApiError::conflict(format!("base revision {base} is stale"), doc.revision));
        }
    }
    if doc.status == to {
        return Ok(Json(doc.clone()));
    }
    let mut next = doc.clone();
    next.status = to;
    next.revision += 1;
    persist(&entry.path, &next)?;
    *doc = next.clone();
    Ok(Json(next))
}

async fn approve(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    body: axum::body::Bytes,
) -> ApiResult<Json<AnnotationDoc>> {
    transition(&st, id, &body, Status::Approved).await
}

async fn reopen(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    body: axum::body::Bytes,
) -> ApiResult<Json<AnnotationDoc>> {
    let entry = st.entry(id)?;
    if entry.doc.lock().await.status != Status::Approved {
        let doc = entry.doc.lock().await.clone();
        return Ok(Json(doc));
    }
    transition(&st, id, &body, Status::InReview).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/pairs", get(list_pairs))
        .route("/pairs/{id}", get(get_pair))
        .route("/pairs/{id}/image/{side}", get(get_image))
        .route("/pairs/{id}/colored/{side}", get(get_colored))
        .route("/pairs/{id}/regions/{side}", get(get_regions))
        .route("/pairs/{id}/corr", put(put_corr))
        .route("/pairs/{id}/approve", post(approve))
        .route("/pairs/{id}/reopen", post(reopen))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(Arc::new(state))
}

/// Binds `addr` and serves until the returned future is dropped or ctrl-c.
pub async fn serve(dataset: &Path, addr: SocketAddr) -> Result<()> {
    let app = router(AppState::open(dataset)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving {} on http://{}", dataset.display(), listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Binds an ephemeral port on localhost and serves in the background.
pub async fn spawn_local(dataset: &Path) -> Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let app = router(AppState::open(dataset)?);
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((addr, handle))
}
