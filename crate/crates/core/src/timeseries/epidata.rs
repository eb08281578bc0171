//! Minimal client for Delphi-style epidata endpoints.
//!
//! A query is split into date pages; every page is a GET with the query
//! parameters below and a JSON body of the form
//! `{"result": 1, "message": "...", "epidata": [{"geo_value", "time_value", "value"}, ...]}`.

use std::collections::BTreeSet;
use std::thread;
use std::time::Duration;

use serde::Deserialize;

use crate::calendar::Day;
use crate::error::{Error, Result};

use super::panel::StreamPanel;

#[derive(Clone, Debug)]
pub struct EpidataQuery {
    pub data_source: String,
    pub signal: String,
    pub geo_type: String,
    pub geo_values: Vec<String>,
    pub start: Day,
    pub end: Day,
}

#[derive(Clone, Debug)]
pub struct FetchOptions {
    /// Days per request.
    pub page_days: usize,
    pub max_attempts: u32,
    /// Delay before the first retry; doubled on every further retry.
    pub backoff: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            page_days: 90,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Issues a GET request. `Err` means the request never produced a status.
pub trait HttpTransport {
    fn get(&self, url: &str, query: &[(String, String)]) -> std::result::Result<HttpResponse, String>;
}

/// Blocking transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport::new(Duration::from_secs(60))
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, query: &[(String, String)]) -> std::result::Result<HttpResponse, String> {
        let mut resp = self
            .agent
            .get(url)
            .query_pairs(query.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .call()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Deserialize)]
struct Envelope {
    result: i64,
    #[serde(default)]
    message: String,
    #[serde(default)]
    epidata: Option<Vec<Row>>,
}

#[derive(Debug, Deserialize)]
struct Row {
    geo_value: String,
    time_value: i64,
    value: Option<f64>,
}

#[derive(Debug)]
pub struct FetchResult {
    pub panel: StreamPanel,
    pub warnings: Vec<String>,
}

pub fn fetch_epidata(
    base_url: &str,
    query: &EpidataQuery,
    opts: &FetchOptions,
    transport: &dyn HttpTransport,
) -> Result<FetchResult> {
    if query.end < query.start {
        return Err(Error::invalid("epidata date range is empty"));
    }
    if query.geo_values.is_empty() {
        return Err(Error::invalid("no geo values requested"));
    }
    let page_days = opts.page_days.max(1) as i32;
    let mut builder = StreamPanel::builder();
    let mut seen: BTreeSet<(String, Day)> = BTreeSet::new();
    let mut warnings = Vec::new();

    let mut page_start = query.start;
    while page_start <= query.end {
        let page_end = (page_start + (page_days - 1)).min(query.end);
        let params = vec![
            ("data_source".to_string(), query.data_source.clone()),
            ("signal".to_string(), query.signal.clone()),
            ("time_type".to_string(), "day".to_string()),
            ("geo_type".to_string(), query.geo_type.clone()),
            ("geo_values".to_string(), query.geo_values.join(",")),
            (
                "time_values".to_string(),
                format!("{}-{}", page_start.compact(), page_end.compact()),
            ),
        ];
        let body = get_with_retry(base_url, &params, opts, transport)?;
        let env: Envelope = serde_json::from_str(&body)
            .map_err(|e| Error::Malformed(format!("page {page_start}..{page_end}: {e}")))?;
        match env.result {
            1 | 2 => {
                if env.result == 2 {
                    warnings.push(format!(
                        "page {page_start}..{page_end} truncated by server: {}",
                        env.message
                    ));
                }
                let rows = env.epidata.ok_or_else(|| {
                    Error::Malformed(format!("page {page_start}..{page_end}: missing `epidata`"))
                })?;
                for row in rows {
                    let day = Day::from_compact(row.time_value)
                        .map_err(|e| Error::Malformed(e.to_string()))?;
                    let Some(value) = row.value else {
                        warnings.push(format!("null value for {} on {day}", row.geo_value));
                        continue;
                    };
                    if !seen.insert((row.geo_value.clone(), day)) {
                        continue;
                    }
                    if let Err(e) = builder.insert(&row.geo_value, &query.signal, day, value) {
                        warnings.push(e.to_string());
                    }
                }
            }
            -2 => {}
            code => {
                return Err(Error::Malformed(format!(
                    "server returned result {code}: {}",
                    env.message
                )))
            }
        }
        page_start = page_end + 1;
    }
    let panel = builder.build()?;
    if panel.is_empty() {
        log::warn!("epidata query for {} returned no rows", query.signal);
        warnings.push("empty result set".to_string());
    }
    Ok(FetchResult { panel, warnings })
}

fn get_with_retry(
    url: &str,
    params: &[(String, String)],
    opts: &FetchOptions,
    transport: &dyn HttpTransport,
) -> Result<String> {
    let attempts = opts.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(opts.backoff * 2u32.pow(attempt - 1));
        }
        match transport.get(url, params) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
            Ok(resp) if resp.status >= 500 || resp.status == 429 => {
                last = format!("HTTP {}", resp.status);
            }
            Ok(resp) => {
                return Err(Error::Transport(format!("HTTP {} from {url}", resp.status)));
            }
            Err(e) => last = e,
        }
        log::debug!("epidata attempt {} failed: {last}", attempt + 1);
    }
    Err(Error::Transport(format!("{last} after {attempts} attempt(s)")))
}
