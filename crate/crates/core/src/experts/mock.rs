use crate::docmodel::{ContentPayload, InlineItem, TableGrid, OBJECT_MARKER};

use super::{
    check_batch, unit_draw, Expert, ExpertDescriptor, ExpertError, ExpertRequest, ExpertResponse,
    Modality, PlaceholderSlot,
};

/// Deterministic stand-in for a recognition service.
///
/// Returns the detection's `truth_payload`, or a fixed transform of
/// `truth_text` for the expert's modality, with placeholder tokens written into
/// the text stream. Whole batches fail with probability `failure_rate`.
#[derive(Debug, Clone)]
pub struct MockExpert {
    descriptor: ExpertDescriptor,
    seed: u64,
}

impl MockExpert {
    pub fn new(descriptor: ExpertDescriptor, seed: u64) -> Self {
        Self { descriptor, seed }
    }

    pub fn for_modality(modality: Modality) -> Self {
        let descriptor = ExpertDescriptor::defaults()
            .into_iter()
            .find(|d| d.modality == modality)
            .expect("every modality has a default descriptor");
        Self::new(descriptor, 0)
    }

    /// Whether the simulated service rejects this batch composition.
    pub fn batch_fails(&self, batch: &[ExpertRequest]) -> bool {
        if self.descriptor.failure_rate <= 0.0 {
            return false;
        }
        let key: String = batch
            .iter()
            .map(|r| format!("{}@{};", r.task_id, r.attempt))
            .collect();
        unit_draw(self.seed, &key, 0) < self.descriptor.failure_rate
    }

    pub fn latency_ms(&self, batch: &[ExpertRequest]) -> f64 {
        self.descriptor.latency.batch_latency_ms(batch)
    }
}

impl Expert for MockExpert {
    fn descriptor(&self) -> &ExpertDescriptor {
        &self.descriptor
    }

    fn process_batch(&self, batch: &[ExpertRequest]) -> Result<Vec<ExpertResponse>, ExpertError> {
        check_batch(&self.descriptor, batch)?;
        if self.batch_fails(batch) {
            return Err(ExpertError::Retryable(format!(
                "{} service unavailable",
                self.descriptor.modality
            )));
        }
        Ok(batch
            .iter()
            .map(|r| match mock_payload(r) {
                Ok(p) => ExpertResponse::ok(&r.task_id, p),
                Err(e) => ExpertResponse::failed(&r.task_id, e),
            })
            .collect())
    }
}

/// The payload a mock expert produces for one request.
pub(crate) fn mock_payload(req: &ExpertRequest) -> Result<ContentPayload, String> {
    let payload = match &req.truth_payload {
        Some(p) => p.clone(),
        None => derive(req.modality, req.truth_text.as_deref().unwrap_or(""))?,
    };
    payload.check()?;
    insert_placeholders(payload, &req.placeholders)
}

fn rows_of(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split('|').map(|c| c.trim().to_string()).collect())
        .collect()
}

fn grid_of(text: &str) -> TableGrid {
    let mut rows = rows_of(text);
    if rows.is_empty() {
        rows.push(vec![String::new()]);
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1);
    for r in &mut rows {
        r.resize(cols, String::new());
    }
    TableGrid::from_rows(&rows)
}

fn derive(modality: Modality, text: &str) -> Result<ContentPayload, String> {
    Ok(match modality {
        Modality::Ocr => ContentPayload::text(text),
        Modality::Formula => ContentPayload::Latex { latex: text.into() },
        Modality::Table => ContentPayload::TableGrid(grid_of(text)),
        Modality::Chart => ContentPayload::ChartTable { table: grid_of(text) },
        Modality::ImageCaption => ContentPayload::Caption { text: text.into() },
        Modality::Ocsr => {
            if text.trim().is_empty() {
                return Err("no structure recognized".into());
            }
            ContentPayload::ESmiles {
                smiles: text.trim().into(),
            }
        }
        Modality::Reaction => {
            // reactants>conditions>products, species separated by '.'
            let parts: Vec<&str> = text.split('>').collect();
            if parts.len() != 3 {
                return Err("no reaction scheme recognized".into());
            }
            let species = |s: &str| -> Vec<String> {
                s.split('.')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(String::from)
                    .collect()
            };
            ContentPayload::Reaction {
                reactants: species(parts[0]),
                conditions: parts[1]
                    .split(';')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(String::from)
                    .collect(),
                products: species(parts[2]),
            }
        }
    })
}

/// Writes the k-th token over the k-th object marker. Extra markers vanish,
/// extra tokens are appended.
pub(crate) fn fill_markers(text: &str, tokens: &[&str]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut next = tokens.iter();
    for ch in text.chars() {
        if ch == OBJECT_MARKER {
            if let Some(t) = next.next() {
                out.push_str(t);
            }
        } else {
            out.push(ch);
        }
    }
    for t in next {
        if !out.is_empty() && !out.ends_with(char::is_whitespace) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

fn insert_placeholders(
    payload: ContentPayload,
    slots: &[PlaceholderSlot],
) -> Result<ContentPayload, String> {
    if slots.is_empty() {
        return Ok(payload);
    }
    let tokens: Vec<&str> = slots.iter().map(|s| s.token.as_str()).collect();
    Ok(match payload {
        ContentPayload::Text { text } => ContentPayload::Text {
            text: fill_markers(&text, &tokens),
        },
        ContentPayload::Caption { text } => ContentPayload::Caption {
            text: fill_markers(&text, &tokens),
        },
        ContentPayload::TableGrid(mut grid) => {
            for slot in slots {
                place_in_table(&mut grid, slot);
            }
            ContentPayload::TableGrid(grid)
        }
        other => return Err(format!("{} payload cannot carry inline objects", other.kind())),
    })
}

/// Puts the token into the cell under the child's relative position, in place
/// of the cell's first object marker when it has one.
fn place_in_table(grid: &mut TableGrid, slot: &PlaceholderSlot) {
    let [fx, fy] = slot.at.unwrap_or([1.0, 1.0]);
    let row = ((fy * grid.rows as f64).floor() as usize).min(grid.rows.saturating_sub(1));
    let col = ((fx * grid.cols as f64).floor() as usize).min(grid.cols.saturating_sub(1));
    let Some(idx) = grid.cell_at(row, col) else {
        return;
    };
    let content = &mut grid.cells[idx].content;
    let hit = content.iter().position(|item| match item {
        InlineItem::Text(t) => t.contains(OBJECT_MARKER),
        InlineItem::Placeholder(_) | InlineItem::Object(_) => false,
    });
    match hit {
        Some(i) => {
            let InlineItem::Text(t) = content[i].clone() else {
                unreachable!()
            };
            let (before, after) = t.split_once(OBJECT_MARKER).expect("marker present");
            let mut parts = Vec::new();
            if !before.is_empty() {
                parts.push(InlineItem::Text(before.to_string()));
            }
            parts.push(InlineItem::Placeholder(slot.token.clone()));
            if !after.is_empty() {
                parts.push(InlineItem::Text(after.to_string()));
            }
            content.splice(i..=i, parts);
        }
        None => content.push(InlineItem::Placeholder(slot.token.clone())),
    }
}
