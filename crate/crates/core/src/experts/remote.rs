use std::collections::HashMap;
use std::time::Duration;

use ureq::Agent;

use super::{
    check_batch, Expert, ExpertDescriptor, ExpertError, ExpertRequest, ExpertResponse,
    WireRequest, WireResponse,
};

/// Expert reached over HTTP at `{endpoint}/v1/experts/{modality}:batch`.
///
/// Status 200 carries a [`WireResponse`], 503 is retryable and 400 fatal.
/// Anything else, including an unreadable body, is a protocol error.
pub struct RemoteExpert {
    descriptor: ExpertDescriptor,
    endpoint: String,
    agent: Agent,
}

impl RemoteExpert {
    pub fn new(descriptor: ExpertDescriptor, endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            descriptor,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn url(&self) -> String {
        format!("{}/v1/experts/{}:batch", self.endpoint, self.descriptor.modality)
    }
}

fn transport(e: ureq::Error) -> ExpertError {
    match e {
        ureq::Error::Timeout(t) => ExpertError::Timeout(t.to_string()),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
            ExpertError::Timeout(io.to_string())
        }
        other => ExpertError::Retryable(other.to_string()),
    }
}

impl Expert for RemoteExpert {
    fn descriptor(&self) -> &ExpertDescriptor {
        &self.descriptor
    }

    fn process_batch(&self, batch: &[ExpertRequest]) -> Result<Vec<ExpertResponse>, ExpertError> {
        check_batch(&self.descriptor, batch)?;
        let body = WireRequest {
            modality: self.descriptor.modality,
            items: batch.to_vec(),
        };
        let mut resp = self.agent.post(self.url()).send_json(&body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string();
        match status {
            200 => {}
            503 => {
                return Err(ExpertError::Retryable(text.unwrap_or_default()));
            }
            400 => return Err(ExpertError::Fatal(text.unwrap_or_default())),
            _ => {
                return Err(ExpertError::Protocol {
                    status,
                    body: text.unwrap_or_default(),
                })
            }
        }
        let text = text.map_err(|e| match e {
            ureq::Error::Timeout(t) => ExpertError::Timeout(t.to_string()),
            other => ExpertError::Protocol {
                status,
                body: format!("unreadable body: {other}"),
            },
        })?;
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| ExpertError::Protocol {
            status,
            body: format!("{e}: {text}"),
        })?;
        reorder(batch, parsed.items).map_err(|reason| ExpertError::Protocol { status, body: reason })
    }
}

/// Puts response items into request order; they must be a permutation of the
/// request task ids.
fn reorder(
    batch: &[ExpertRequest],
    items: Vec<ExpertResponse>,
) -> Result<Vec<ExpertResponse>, String> {
    if items.len() != batch.len() {
        return Err(format!("expected {} items, got {}", batch.len(), items.len()));
    }
    let mut by_id: HashMap<String, ExpertResponse> = HashMap::with_capacity(items.len());
    for item in items {
        if by_id.insert(item.task_id.clone(), item).is_some() {
            return Err("duplicate task id in response".into());
        }
    }
    batch
        .iter()
        .map(|r| {
            by_id
                .remove(&r.task_id)
                .ok_or_else(|| format!("task {} missing from response", r.task_id))
        })
        .collect()
}
