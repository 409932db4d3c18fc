use serde::Serialize;

use crate::expr::{check_expr, Expr, SignalType};
use crate::value::{Field, ScalarType, Schema, Value};

/// A validated visualization specification.
#[derive(Clone, Debug, PartialEq)]
pub struct VizSpec {
    pub version: u32,
    pub signals: Vec<SignalDef>,
    pub sources: Vec<DataSource>,
    pub datasets: Vec<Dataset>,
    pub marks: Vec<MarkStub>,
    /// Unknown top-level keys, kept verbatim.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl VizSpec {
    pub fn dataset(&self, name: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn source(&self, name: &str) -> Option<&DataSource> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn signal(&self, name: &str) -> Option<&SignalDef> {
        self.signals.iter().find(|s| s.name == name)
    }

    /// Number of transforms over all datasets.
    pub fn transform_count(&self) -> usize {
        self.datasets.iter().map(|d| d.transforms.len()).sum()
    }

    /// Datasets whose outputs are rendered: the ones marks draw from, or,
    /// without marks, every dataset no other dataset derives from.
    pub fn sink_datasets(&self) -> Vec<&str> {
        if !self.marks.is_empty() {
            let mut out: Vec<&str> = Vec::new();
            for m in &self.marks {
                if !out.contains(&m.from.as_str()) {
                    out.push(&m.from);
                }
            }
            return out;
        }
        self.datasets
            .iter()
            .filter(|d| {
                !self
                    .datasets
                    .iter()
                    .any(|o| o.input == DatasetInput::Dataset(d.name.clone()))
            })
            .map(|d| d.name.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataOrigin {
    /// A table that already lives in the DBMS.
    Table { table: String },
    /// Rows embedded in the spec.
    Inline {
        #[serde(skip)]
        rows: Vec<serde_json::Value>,
    },
    /// A CSV file; hosts resolve the reference (path or uploaded name).
    File { url: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSource {
    pub name: String,
    pub origin: DataOrigin,
    pub schema: Schema,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetInput {
    /// Reads the raw rows of the data source with the same name.
    Source(String),
    /// Continues from another dataset's output.
    Dataset(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub input: DatasetInput,
    pub transforms: Vec<TransformDef>,
    /// Schema of the rows this dataset emits.
    pub schema: Schema,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Bind {
    None,
    Slider { min: f64, max: f64, step: f64 },
    Select { options: Vec<Value> },
    Radio { options: Vec<Value> },
    /// Free-text input holding a regular expression.
    TextRegex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalDef {
    pub name: String,
    pub value: Value,
    pub bind: Bind,
}

impl SignalDef {
    pub fn scalar_type(&self) -> ScalarType {
        self.value.scalar_type().unwrap_or(ScalarType::String)
    }

    /// Checks that `v` is an admissible value for this signal's bind.
    pub fn validate(&self, v: &Value) -> Result<(), String> {
        if v.scalar_type() != Some(self.scalar_type()) {
            return Err(format!(
                "signal '{}' expects a {} value",
                self.name,
                self.scalar_type()
            ));
        }
        match &self.bind {
            Bind::None => Ok(()),
            Bind::Slider { min, max, .. } => {
                let x = v.as_f64().unwrap_or(f64::NAN);
                if x >= *min && x <= *max {
                    Ok(())
                } else {
                    Err(format!(
                        "signal '{}' value {v} outside slider range [{min}, {max}]",
                        self.name
                    ))
                }
            }
            Bind::Select { options } | Bind::Radio { options } => {
                if options.contains(v) {
                    Ok(())
                } else {
                    Err(format!("signal '{}' value {v} is not an option", self.name))
                }
            }
            Bind::TextRegex => regex::Regex::new(v.as_str().unwrap_or_default())
                .map(|_| ())
                .map_err(|e| format!("signal '{}' is not a valid regex: {e}", self.name)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkStub {
    pub name: Option<String>,
    pub mark_type: String,
    pub from: String,
    pub fields: Vec<String>,
}

/// A transform parameter that is either fixed or read from a signal.
#[derive(Clone, Debug, PartialEq)]
pub enum Param<T> {
    Literal(T),
    Signal(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExtentRef {
    Literal(f64, f64),
    Signal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggOp {
    Count,
    Sum,
    Mean,
    Min,
    Max,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Count => "count",
            AggOp::Sum => "sum",
            AggOp::Mean => "mean",
            AggOp::Min => "min",
            AggOp::Max => "max",
        }
    }

    pub fn parse(s: &str) -> Option<AggOp> {
        Some(match s {
            "count" => AggOp::Count,
            "sum" => AggOp::Sum,
            "mean" | "average" => AggOp::Mean,
            "min" => AggOp::Min,
            "max" => AggOp::Max,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    pub op: AggOp,
    /// `None` only for `count`.
    pub field: Option<String>,
    pub output: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Ascending,
    Descending,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SortKey {
    pub field: String,
    pub order: SortOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Filter,
    Formula,
    Extent,
    Bin,
    Aggregate,
    Collect,
    Stack,
    Project,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Filter,
        TransformKind::Formula,
        TransformKind::Extent,
        TransformKind::Bin,
        TransformKind::Aggregate,
        TransformKind::Collect,
        TransformKind::Stack,
        TransformKind::Project,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Filter => "filter",
            TransformKind::Formula => "formula",
            TransformKind::Extent => "extent",
            TransformKind::Bin => "bin",
            TransformKind::Aggregate => "aggregate",
            TransformKind::Collect => "collect",
            TransformKind::Stack => "stack",
            TransformKind::Project => "project",
        }
    }

    pub fn parse(s: &str) -> Option<TransformKind> {
        TransformKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransformDef {
    Filter {
        expr: Expr,
    },
    Formula {
        expr: Expr,
        output: String,
    },
    Extent {
        field: String,
        signal: String,
    },
    Bin {
        field: String,
        extent: ExtentRef,
        maxbins: Param<f64>,
        outputs: [String; 2],
    },
    Aggregate {
        groupby: Vec<String>,
        measures: Vec<Measure>,
    },
    Collect {
        sort: Vec<SortKey>,
    },
    Stack {
        groupby: Vec<String>,
        sort: SortKey,
        field: String,
        outputs: [String; 2],
    },
    Project {
        fields: Vec<String>,
    },
}

/// Error from validating a transform against its input schema.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("field '{field}' must be {expected}, found {found}")]
    FieldType {
        field: String,
        expected: ScalarType,
        found: ScalarType,
    },
    #[error("{0}")]
    Expr(#[from] crate::expr::TypeError),
    #[error("unknown signal '{0}'")]
    UnknownSignal(String),
    #[error("signal '{signal}' has the wrong type: {detail}")]
    SignalType { signal: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

impl TransformDef {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformDef::Filter { .. } => TransformKind::Filter,
            TransformDef::Formula { .. } => TransformKind::Formula,
            TransformDef::Extent { .. } => TransformKind::Extent,
            TransformDef::Bin { .. } => TransformKind::Bin,
            TransformDef::Aggregate { .. } => TransformKind::Aggregate,
            TransformDef::Collect { .. } => TransformKind::Collect,
            TransformDef::Stack { .. } => TransformKind::Stack,
            TransformDef::Project { .. } => TransformKind::Project,
        }
    }

    /// Signals read by this transform's parameters.
    pub fn signal_refs(&self) -> Vec<String> {
        let mut out: Vec<String> = match self {
            TransformDef::Filter { expr } | TransformDef::Formula { expr, .. } => {
                expr.signals().into_iter().collect()
            }
            TransformDef::Bin {
                extent, maxbins, ..
            } => {
                let mut v = Vec::new();
                if let ExtentRef::Signal(s) = extent {
                    v.push(s.clone());
                }
                if let Param::Signal(s) = maxbins {
                    v.push(s.clone());
                }
                v
            }
            _ => Vec::new(),
        };
        out.dedup();
        out
    }

    /// The signal this transform publishes (extent only).
    pub fn published_signal(&self) -> Option<&str> {
        match self {
            TransformDef::Extent { signal, .. } => Some(signal),
            _ => None,
        }
    }

    /// Fields of the input this transform reads.
    pub fn input_fields(&self) -> Vec<String> {
        match self {
            TransformDef::Filter { expr } | TransformDef::Formula { expr, .. } => {
                expr.fields().into_iter().collect()
            }
            TransformDef::Extent { field, .. } | TransformDef::Bin { field, .. } => {
                vec![field.clone()]
            }
            TransformDef::Aggregate { groupby, measures } => {
                let mut v = groupby.clone();
                v.extend(measures.iter().filter_map(|m| m.field.clone()));
                v
            }
            TransformDef::Collect { sort } => sort.iter().map(|k| k.field.clone()).collect(),
            TransformDef::Stack {
                groupby,
                sort,
                field,
                ..
            } => {
                let mut v = groupby.clone();
                v.push(sort.field.clone());
                v.push(field.clone());
                v
            }
            TransformDef::Project { fields } => fields.clone(),
        }
    }

    /// Validates the transform against `input` and returns its output schema.
    pub fn output_schema(
        &self,
        input: &Schema,
        signals: &dyn Fn(&str) -> Option<SignalType>,
    ) -> Result<Schema, TransformError> {
        let field_type = |name: &str| {
            input
                .field(name)
                .map(|f| f.ty)
                .ok_or_else(|| TransformError::UnknownField(name.to_string()))
        };
        let numeric = |name: &str| {
            let t = field_type(name)?;
            if t == ScalarType::Number {
                Ok(())
            } else {
                Err(TransformError::FieldType {
                    field: name.to_string(),
                    expected: ScalarType::Number,
                    found: t,
                })
            }
        };
        let mut out = input.clone();
        match self {
            TransformDef::Filter { expr } => {
                let t = check_expr(expr, input, signals)?;
                if t != ScalarType::Boolean {
                    return Err(TransformError::Invalid(format!(
                        "filter expression must be boolean, found {t}"
                    )));
                }
            }
            TransformDef::Formula { expr, output } => {
                let t = check_expr(expr, input, signals)?;
                out.upsert(Field::new(output.clone(), t));
            }
            TransformDef::Extent { field, .. } => numeric(field)?,
            TransformDef::Bin {
                field,
                extent,
                maxbins,
                outputs,
            } => {
                numeric(field)?;
                match extent {
                    ExtentRef::Literal(lo, hi) => {
                        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                            return Err(TransformError::Invalid(format!(
                                "bin extent [{lo}, {hi}] must be finite with lo <= hi"
                            )));
                        }
                    }
                    ExtentRef::Signal(s) => match signals(s) {
                        Some(SignalType::Extent) => {}
                        Some(_) => {
                            return Err(TransformError::SignalType {
                                signal: s.clone(),
                                detail: "bin extent must come from an extent transform".into(),
                            })
                        }
                        None => return Err(TransformError::UnknownSignal(s.clone())),
                    },
                }
                match maxbins {
                    Param::Literal(m) => {
                        if !(*m >= 1.0) {
                            return Err(TransformError::Invalid(format!(
                                "maxbins must be >= 1, found {m}"
                            )));
                        }
                    }
                    Param::Signal(s) => match signals(s) {
                        Some(SignalType::Scalar(ScalarType::Number)) => {}
                        Some(_) => {
                            return Err(TransformError::SignalType {
                                signal: s.clone(),
                                detail: "maxbins must be a number".into(),
                            })
                        }
                        None => return Err(TransformError::UnknownSignal(s.clone())),
                    },
                }
                if outputs[0] == outputs[1] {
                    return Err(TransformError::Invalid("bin output names must differ".into()));
                }
                for o in outputs {
                    out.upsert(Field::new(o.clone(), ScalarType::Number));
                }
            }
            TransformDef::Aggregate { groupby, measures } => {
                if measures.is_empty() {
                    return Err(TransformError::Invalid(
                        "aggregate needs at least one measure".into(),
                    ));
                }
                let mut fields = Vec::new();
                for g in groupby {
                    let t = field_type(g)?;
                    fields.push(Field::new(g.clone(), t));
                }
                for m in measures {
                    match (&m.field, m.op) {
                        (_, AggOp::Count) => {}
                        (Some(f), _) => numeric(f)?,
                        (None, op) => {
                            return Err(TransformError::Invalid(format!(
                                "aggregate op '{}' needs a field",
                                op.name()
                            )))
                        }
                    }
                    fields.push(Field::new(m.output.clone(), ScalarType::Number));
                }
                out = Schema(fields);
                if let Some(d) = out.duplicate_name() {
                    return Err(TransformError::Invalid(format!(
                        "aggregate output name '{d}' is used twice"
                    )));
                }
            }
            TransformDef::Collect { sort } => {
                if sort.is_empty() {
                    return Err(TransformError::Invalid("collect needs a sort field".into()));
                }
                for k in sort {
                    field_type(&k.field)?;
                }
            }
            TransformDef::Stack {
                groupby,
                sort,
                field,
                outputs,
            } => {
                for g in groupby {
                    field_type(g)?;
                }
                field_type(&sort.field)?;
                numeric(field)?;
                if outputs[0] == outputs[1] {
                    return Err(TransformError::Invalid("stack output names must differ".into()));
                }
                for o in outputs {
                    out.upsert(Field::new(o.clone(), ScalarType::Number));
                }
            }
            TransformDef::Project { fields } => {
                if fields.is_empty() {
                    return Err(TransformError::Invalid("project needs at least one field".into()));
                }
                out = Schema(
                    fields
                        .iter()
                        .map(|f| input.field(f).cloned().ok_or_else(|| TransformError::UnknownField(f.clone())))
                        .collect::<Result<_, _>>()?,
                );
                if let Some(d) = out.duplicate_name() {
                    return Err(TransformError::Invalid(format!("field '{d}' projected twice")));
                }
            }
        }
        // the SQL translation uses `__`-prefixed hidden columns
        if let Some(f) = out
            .fields()
            .iter()
            .find(|f| f.name.starts_with("__") && input.field(&f.name).is_none())
        {
            return Err(TransformError::Invalid(format!(
                "output name '{}' is reserved; names may not start with '__'",
                f.name
            )));
        }
        Ok(out)
    }
}
