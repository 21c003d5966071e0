//! Structured model of nbformat v4 notebooks.
//!
//! Parsing walks the raw JSON tree by hand so that errors can name the exact
//! field path (`cells[3].outputs[0].ename`). Fields the model does not know
//! about are kept in `extra` maps and written back on serialization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const NOTEBOOK_EXTENSION: &str = "ipynb";
const SUPPORTED_MAJOR: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Code,
    Markdown,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputType {
    Stream,
    ExecuteResult,
    DisplayData,
    Error,
}

impl OutputType {
    fn as_nbformat(self) -> &'static str {
        match self {
            OutputType::Stream => "stream",
            OutputType::ExecuteResult => "execute_result",
            OutputType::DisplayData => "display_data",
            OutputType::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorOutput {
    pub name: String,
    pub value: String,
    pub traceback: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutput {
    pub output_type: OutputType,
    /// `stdout` / `stderr` for stream outputs.
    pub stream_name: Option<String>,
    /// Media type to content. Stream text is stored under `text/plain`.
    /// Multi-line string content is joined into a single string.
    pub payload: BTreeMap<String, Value>,
    pub error: Option<ErrorOutput>,
    pub execution_count: Option<i64>,
    pub metadata: Map<String, Value>,
    pub extra: Map<String, Value>,
}

impl CellOutput {
    pub fn stream(name: &str, text: &str) -> Self {
        let mut payload = BTreeMap::new();
        payload.insert("text/plain".to_string(), Value::String(text.to_string()));
        Self {
            output_type: OutputType::Stream,
            stream_name: Some(name.to_string()),
            payload,
            error: None,
            execution_count: None,
            metadata: Map::new(),
            extra: Map::new(),
        }
    }

    pub fn error(name: &str, value: &str, traceback: Vec<String>) -> Self {
        Self {
            output_type: OutputType::Error,
            stream_name: None,
            payload: BTreeMap::new(),
            error: Some(ErrorOutput {
                name: name.to_string(),
                value: value.to_string(),
                traceback,
            }),
            execution_count: None,
            metadata: Map::new(),
            extra: Map::new(),
        }
    }

    pub fn execute_result(payload: BTreeMap<String, Value>, execution_count: Option<i64>) -> Self {
        Self {
            output_type: OutputType::ExecuteResult,
            stream_name: None,
            payload,
            error: None,
            execution_count,
            metadata: Map::new(),
            extra: Map::new(),
        }
    }

    pub fn display_data(payload: BTreeMap<String, Value>) -> Self {
        Self {
            output_type: OutputType::DisplayData,
            stream_name: None,
            payload,
            error: None,
            execution_count: None,
            metadata: Map::new(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Position in document order, contiguous from 0.
    pub index: usize,
    pub kind: CellKind,
    pub source: String,
    pub outputs: Vec<CellOutput>,
    pub execution_count: Option<i64>,
    pub metadata: Map<String, Value>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedNotebook {
    pub nbformat: (u32, u32),
    /// `metadata.kernelspec.name`, empty when the notebook names no kernel.
    pub kernel_name: String,
    /// Declared language from `kernelspec.language` or `language_info.name`.
    pub language: Option<String>,
    pub cells: Vec<Cell>,
    pub metadata: Map<String, Value>,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotebookParseError {
    #[error("malformed notebook JSON at line {line}, column {column} (byte {offset}): {message}")]
    Json {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("invalid notebook field `{path}`: {reason}")]
    Field { path: String, reason: String },
    #[error("unsupported nbformat {major}")]
    UnsupportedFormat { major: u32 },
}

fn field_err(path: impl Into<String>, reason: impl Into<String>) -> NotebookParseError {
    NotebookParseError::Field {
        path: path.into(),
        reason: reason.into(),
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current_line = 1;
    let mut line_start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current_line == line {
            break;
        }
        if *b == b'\n' {
            current_line += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

/// Joins nbformat "multiline strings", which may be a string or a list of strings.
fn multiline(value: &Value, path: &str) -> Result<String, NotebookParseError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let mut out = String::new();
            for (i, part) in parts.iter().enumerate() {
                match part {
                    Value::String(s) => out.push_str(s),
                    _ => return Err(field_err(format!("{path}[{i}]"), "expected string")),
                }
            }
            Ok(out)
        }
        _ => Err(field_err(path, "expected string or list of strings")),
    }
}

fn take_object(value: Option<Value>, path: &str) -> Result<Map<String, Value>, NotebookParseError> {
    match value {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(Value::Object(map)) => Ok(map),
        Some(_) => Err(field_err(path, "expected object")),
    }
}

fn take_count(value: Option<Value>, path: &str) -> Result<Option<i64>, NotebookParseError> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .map(Some)
            .ok_or_else(|| field_err(path, "expected integer")),
        Some(_) => Err(field_err(path, "expected integer or null")),
    }
}

fn take_string(value: Option<Value>, path: &str) -> Result<String, NotebookParseError> {
    match value {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(field_err(path, "expected string")),
        None => Err(field_err(path, "missing")),
    }
}

fn payload_map(value: Option<Value>, path: &str) -> Result<BTreeMap<String, Value>, NotebookParseError> {
    let map = take_object(value, path)?;
    let mut payload = BTreeMap::new();
    for (media_type, content) in map {
        let content = match content {
            Value::Array(_) if media_type.starts_with("text/") || is_multiline_array(&content) => {
                Value::String(multiline(&content, &format!("{path}.{media_type}"))?)
            }
            other => other,
        };
        payload.insert(media_type, content);
    }
    Ok(payload)
}

fn is_multiline_array(value: &Value) -> bool {
    matches!(value, Value::Array(items) if items.iter().all(Value::is_string))
}

fn parse_output(value: Value, path: &str) -> Result<CellOutput, NotebookParseError> {
    let Value::Object(mut map) = value else {
        return Err(field_err(path, "expected object"));
    };
    let output_type = match take_string(map.remove("output_type"), &format!("{path}.output_type"))?.as_str() {
        "stream" => OutputType::Stream,
        "execute_result" | "pyout" => OutputType::ExecuteResult,
        "display_data" => OutputType::DisplayData,
        "error" | "pyerr" => OutputType::Error,
        other => {
            return Err(field_err(
                format!("{path}.output_type"),
                format!("unknown output type {other:?}"),
            ))
        }
    };
    let metadata = take_object(map.remove("metadata"), &format!("{path}.metadata"))?;
    let mut output = CellOutput {
        output_type,
        stream_name: None,
        payload: BTreeMap::new(),
        error: None,
        execution_count: None,
        metadata,
        extra: Map::new(),
    };
    match output_type {
        OutputType::Stream => {
            output.stream_name = Some(take_string(map.remove("name"), &format!("{path}.name"))?);
            let text = map
                .remove("text")
                .ok_or_else(|| field_err(format!("{path}.text"), "missing"))?;
            output
                .payload
                .insert("text/plain".into(), Value::String(multiline(&text, &format!("{path}.text"))?));
        }
        OutputType::ExecuteResult | OutputType::DisplayData => {
            output.payload = payload_map(map.remove("data"), &format!("{path}.data"))?;
            if output_type == OutputType::ExecuteResult {
                output.execution_count =
                    take_count(map.remove("execution_count"), &format!("{path}.execution_count"))?;
            }
        }
        OutputType::Error => {
            let name = take_string(map.remove("ename"), &format!("{path}.ename"))?;
            if name.is_empty() {
                return Err(field_err(format!("{path}.ename"), "error output without a name"));
            }
            let value = take_string(map.remove("evalue"), &format!("{path}.evalue")).unwrap_or_default();
            let traceback = match map.remove("traceback") {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::Array(lines)) => lines
                    .into_iter()
                    .enumerate()
                    .map(|(i, line)| match line {
                        Value::String(s) => Ok(s),
                        _ => Err(field_err(format!("{path}.traceback[{i}]"), "expected string")),
                    })
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(field_err(format!("{path}.traceback"), "expected list")),
            };
            output.error = Some(ErrorOutput { name, value, traceback });
        }
    }
    output.extra = map;
    Ok(output)
}

fn parse_cell(index: usize, value: Value) -> Result<Cell, NotebookParseError> {
    let path = format!("cells[{index}]");
    let Value::Object(mut map) = value else {
        return Err(field_err(path, "expected object"));
    };
    let kind = match take_string(map.remove("cell_type"), &format!("{path}.cell_type"))?.as_str() {
        "code" => CellKind::Code,
        "markdown" => CellKind::Markdown,
        "raw" => CellKind::Raw,
        other => {
            return Err(field_err(
                format!("{path}.cell_type"),
                format!("unknown cell type {other:?}"),
            ))
        }
    };
    let source = map
        .remove("source")
        .ok_or_else(|| field_err(format!("{path}.source"), "missing"))?;
    let source = multiline(&source, &format!("{path}.source"))?;
    let metadata = take_object(map.remove("metadata"), &format!("{path}.metadata"))?;

    let mut outputs = Vec::new();
    let mut execution_count = None;
    if kind == CellKind::Code {
        execution_count = take_count(map.remove("execution_count"), &format!("{path}.execution_count"))?;
        match map.remove("outputs") {
            Some(Value::Array(items)) => {
                for (i, item) in items.into_iter().enumerate() {
                    outputs.push(parse_output(item, &format!("{path}.outputs[{i}]"))?);
                }
            }
            Some(_) => return Err(field_err(format!("{path}.outputs"), "expected list")),
            None => return Err(field_err(format!("{path}.outputs"), "missing")),
        }
    }
    Ok(Cell {
        index,
        kind,
        source,
        outputs,
        execution_count,
        metadata,
        extra: map,
    })
}

/// Parses raw notebook bytes into the cell model.
pub fn parse_notebook(bytes: &[u8]) -> Result<ParsedNotebook, NotebookParseError> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| NotebookParseError::Json {
        line: e.line(),
        column: e.column(),
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Object(mut map) = root else {
        return Err(field_err("$", "expected object at top level"));
    };
    let major = match map.remove("nbformat") {
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| field_err("nbformat", "expected non-negative integer"))? as u32,
        Some(_) => return Err(field_err("nbformat", "expected integer")),
        None => return Err(field_err("nbformat", "missing")),
    };
    if major != SUPPORTED_MAJOR {
        return Err(NotebookParseError::UnsupportedFormat { major });
    }
    let minor = match map.remove("nbformat_minor") {
        Some(Value::Number(n)) => n.as_u64().unwrap_or(0) as u32,
        _ => 0,
    };
    let metadata = take_object(map.remove("metadata"), "metadata")?;
    let kernelspec = metadata.get("kernelspec").and_then(Value::as_object);
    let kernel_name = kernelspec
        .and_then(|k| k.get("name"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let language = kernelspec
        .and_then(|k| k.get("language"))
        .or_else(|| {
            metadata
                .get("language_info")
                .and_then(Value::as_object)
                .and_then(|l| l.get("name"))
        })
        .and_then(Value::as_str)
        .map(str::to_string);

    let cells = match map.remove("cells") {
        Some(Value::Array(items)) => items
            .into_iter()
            .enumerate()
            .map(|(i, item)| parse_cell(i, item))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(field_err("cells", "expected list")),
        None => return Err(field_err("cells", "missing")),
    };
    Ok(ParsedNotebook {
        nbformat: (major, minor),
        kernel_name,
        language,
        cells,
        metadata,
        extra: map,
    })
}

fn output_to_value(output: &CellOutput) -> Value {
    let mut map = output.extra.clone();
    map.insert("output_type".into(), output.output_type.as_nbformat().into());
    match output.output_type {
        OutputType::Stream => {
            map.insert(
                "name".into(),
                output.stream_name.clone().unwrap_or_else(|| "stdout".into()).into(),
            );
            map.insert(
                "text".into(),
                output.payload.get("text/plain").cloned().unwrap_or_else(|| "".into()),
            );
            if !output.metadata.is_empty() {
                map.insert("metadata".into(), Value::Object(output.metadata.clone()));
            }
        }
        OutputType::ExecuteResult | OutputType::DisplayData => {
            let data: Map<String, Value> = output.payload.clone().into_iter().collect();
            map.insert("data".into(), Value::Object(data));
            map.insert("metadata".into(), Value::Object(output.metadata.clone()));
            if output.output_type == OutputType::ExecuteResult {
                map.insert("execution_count".into(), output.execution_count.into());
            }
        }
        OutputType::Error => {
            if !output.metadata.is_empty() {
                map.insert("metadata".into(), Value::Object(output.metadata.clone()));
            }
            if let Some(err) = &output.error {
                map.insert("ename".into(), err.name.clone().into());
                map.insert("evalue".into(), err.value.clone().into());
                map.insert("traceback".into(), err.traceback.clone().into());
            }
        }
    }
    Value::Object(map)
}

/// Writes the model back as nbformat v4 JSON. Sources are emitted as single strings.
pub fn serialize_notebook(nb: &ParsedNotebook) -> String {
    let cells: Vec<Value> = nb
        .cells
        .iter()
        .map(|cell| {
            let mut map = cell.extra.clone();
            let kind = match cell.kind {
                CellKind::Code => "code",
                CellKind::Markdown => "markdown",
                CellKind::Raw => "raw",
            };
            map.insert("cell_type".into(), kind.into());
            map.insert("metadata".into(), Value::Object(cell.metadata.clone()));
            map.insert("source".into(), cell.source.clone().into());
            if cell.kind == CellKind::Code {
                map.insert("execution_count".into(), cell.execution_count.into());
                map.insert(
                    "outputs".into(),
                    Value::Array(cell.outputs.iter().map(output_to_value).collect()),
                );
            }
            Value::Object(map)
        })
        .collect();
    let mut root = nb.extra.clone();
    root.insert("cells".into(), Value::Array(cells));
    root.insert("metadata".into(), Value::Object(nb.metadata.clone()));
    root.insert("nbformat".into(), nb.nbformat.0.into());
    root.insert("nbformat_minor".into(), nb.nbformat.1.into());
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("notebook JSON is serializable");
    text.push('\n');
    text
}

impl ParsedNotebook {
    /// Builds an in-memory notebook from cell kinds and sources (fixtures, tests).
    pub fn from_cells(cells: Vec<(CellKind, String, Vec<CellOutput>)>) -> Self {
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(index, (kind, source, outputs))| Cell {
                index,
                kind,
                source,
                outputs: if kind == CellKind::Code { outputs } else { Vec::new() },
                execution_count: None,
                metadata: Map::new(),
                extra: Map::new(),
            })
            .collect();
        let mut metadata = Map::new();
        metadata.insert(
            "kernelspec".into(),
            serde_json::json!({"name": "python3", "display_name": "Python 3", "language": "python"}),
        );
        Self {
            nbformat: (4, 5),
            kernel_name: "python3".into(),
            language: Some("python".into()),
            cells,
            metadata,
            extra: Map::new(),
        }
    }

    pub fn code_cells(&self) -> Vec<&Cell> {
        code_cells(self)
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.cells.iter().filter(|c| c.kind == kind).count()
    }

    /// True unless the notebook declares a language other than Python.
    pub fn is_python(&self) -> bool {
        match &self.language {
            Some(lang) => lang.trim().to_ascii_lowercase().starts_with("python"),
            None => true,
        }
    }
}

/// Code cells in document order; the length is the notebook's total code-cell count.
pub fn code_cells(nb: &ParsedNotebook) -> Vec<&Cell> {
    nb.cells.iter().filter(|c| c.kind == CellKind::Code).collect()
}

/// Markdown cells per code cell; `None` when the notebook has no code cells.
pub fn markdown_code_ratio(nb: &ParsedNotebook) -> Option<f64> {
    let code = nb.count(CellKind::Code);
    if code == 0 {
        return None;
    }
    Some(nb.count(CellKind::Markdown) as f64 / code as f64)
}
