use std::collections::HashMap;

use serde_json::{Map, Value as Json};

use super::model::*;
use crate::expr::{parse_expr, SignalType, TypeError};
use crate::table::Table;
use crate::value::{Field, ScalarType, Schema, Value};

pub const SPEC_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpecErrorKind {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown transform kind '{0}'")]
    UnknownTransform(String),
    #[error("unresolved {what} '{name}'")]
    Unresolved { what: &'static str, name: String },
    #[error("duplicate {what} name '{name}'")]
    Duplicate { what: &'static str, name: String },
    #[error("expression syntax error at offset {offset}: {message}")]
    ExprSyntax { offset: usize, message: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown table '{0}'")]
    UnknownTable(String),
}

/// A rejected spec, located by a JSON path such as `$.data[1].transform[0].expr`.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{path}: {kind}")]
pub struct SpecError {
    pub path: String,
    pub kind: SpecErrorKind,
}

impl SpecError {
    fn new(path: impl Into<String>, kind: SpecErrorKind) -> Self {
        SpecError {
            path: path.into(),
            kind,
        }
    }

    fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SpecError::new(path, SpecErrorKind::Invalid(msg.into()))
    }
}

type Result<T> = std::result::Result<T, SpecError>;

/// Resolves schemas of external data (DBMS tables and file references).
pub trait Catalog {
    fn schema_of(&self, origin: &DataOrigin) -> Option<Schema>;
}

/// Parses a spec whose external sources all declare their schema.
pub fn parse_spec(json_text: &str) -> Result<VizSpec> {
    parse(json_text, None)
}

/// Parses a spec, filling and checking external schemas from `catalog`.
/// Tables the catalog does not know are rejected.
pub fn parse_spec_with_catalog(json_text: &str, catalog: &dyn Catalog) -> Result<VizSpec> {
    parse(json_text, Some(catalog))
}

fn parse(text: &str, catalog: Option<&dyn Catalog>) -> Result<VizSpec> {
    let root: Json = serde_json::from_str(text)
        .map_err(|e| SpecError::new("$", SpecErrorKind::Json(e.to_string())))?;
    let Json::Object(mut obj) = root else {
        return Err(SpecError::invalid("$", "spec must be a JSON object"));
    };

    match obj.get("vegaplus_version") {
        None => {
            return Err(SpecError::new(
                "$",
                SpecErrorKind::Missing("vegaplus_version".into()),
            ))
        }
        Some(v) if v.as_u64() == Some(SPEC_VERSION) => {}
        Some(v) => {
            return Err(SpecError::invalid(
                "$.vegaplus_version",
                format!("unsupported version {v}, expected {SPEC_VERSION}"),
            ))
        }
    }

    let signals = match obj.get("signals") {
        None => Vec::new(),
        Some(v) => array(v, "$.signals")?
            .iter()
            .enumerate()
            .map(|(i, s)| parse_signal(s, &format!("$.signals[{i}]")))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut signal_types: HashMap<String, SignalType> = HashMap::new();
    for (i, s) in signals.iter().enumerate() {
        if signal_types
            .insert(s.name.clone(), SignalType::Scalar(s.scalar_type()))
            .is_some()
        {
            return Err(SpecError::new(
                format!("$.signals[{i}].name"),
                SpecErrorKind::Duplicate {
                    what: "signal",
                    name: s.name.clone(),
                },
            ));
        }
    }

    let data: Vec<Json> = match obj.get("data") {
        None => Vec::new(),
        Some(v) => array(v, "$.data")?.to_vec(),
    };

    // Extent transforms publish signals; register them up front so a
    // reference that would form a cycle reaches the dataflow builder.
    for (i, d) in data.iter().enumerate() {
        let Some(ts) = d.get("transform").and_then(Json::as_array) else {
            continue;
        };
        for (j, t) in ts.iter().enumerate() {
            if t.get("type").and_then(Json::as_str) != Some("extent") {
                continue;
            }
            if let Some(name) = t.get("signal").and_then(Json::as_str) {
                if signal_types
                    .insert(name.to_string(), SignalType::Extent)
                    .is_some()
                {
                    return Err(SpecError::new(
                        format!("$.data[{i}].transform[{j}].signal"),
                        SpecErrorKind::Duplicate {
                            what: "signal",
                            name: name.to_string(),
                        },
                    ));
                }
            }
        }
    }
    let lookup = |name: &str| signal_types.get(name).copied();

    let mut sources = Vec::new();
    let mut datasets: Vec<Dataset> = Vec::new();
    for (i, d) in data.iter().enumerate() {
        let path = format!("$.data[{i}]");
        let o = object(d, &path)?;
        let name = string_key(o, "name", &path)?;
        if datasets.iter().any(|x| x.name == name) {
            return Err(SpecError::new(
                format!("{path}.name"),
                SpecErrorKind::Duplicate {
                    what: "dataset",
                    name,
                },
            ));
        }

        let (input, mut schema) = parse_input(o, &name, &path, &datasets, catalog, &mut sources)?;
        let mut transforms = Vec::new();
        if let Some(ts) = o.get("transform") {
            for (j, t) in array(ts, &format!("{path}.transform"))?.iter().enumerate() {
                let tpath = format!("{path}.transform[{j}]");
                let def = parse_transform(t, &tpath)?;
                schema = def
                    .output_schema(&schema, &lookup)
                    .map_err(|e| transform_error(e, &def, &tpath))?;
                transforms.push(def);
            }
        }
        datasets.push(Dataset {
            name,
            input,
            transforms,
            schema,
        });
    }

    let marks = match obj.get("marks") {
        None => Vec::new(),
        Some(v) => array(v, "$.marks")?
            .iter()
            .enumerate()
            .map(|(i, m)| parse_mark(m, &format!("$.marks[{i}]"), &datasets))
            .collect::<Result<Vec<_>>>()?,
    };

    for key in ["vegaplus_version", "signals", "data", "marks"] {
        obj.remove(key);
    }
    Ok(VizSpec {
        version: SPEC_VERSION as u32,
        signals,
        sources,
        datasets,
        marks,
        extra: obj,
    })
}

fn parse_input(
    o: &Map<String, Json>,
    name: &str,
    path: &str,
    datasets: &[Dataset],
    catalog: Option<&dyn Catalog>,
    sources: &mut Vec<DataSource>,
) -> Result<(DatasetInput, Schema)> {
    let keys: Vec<&str> = ["table", "values", "url", "source"]
        .into_iter()
        .filter(|k| o.contains_key(*k))
        .collect();
    match keys.len() {
        0 => {
            return Err(SpecError::new(
                path,
                SpecErrorKind::Missing("one of table, values, url, source".into()),
            ))
        }
        1 => {}
        _ => {
            return Err(SpecError::invalid(
                path,
                format!("keys {} are mutually exclusive", keys.join(", ")),
            ))
        }
    }
    let declared = match o.get("schema") {
        Some(s) => Some(parse_schema(s, &format!("{path}.schema"))?),
        None => None,
    };

    if let Some(src) = o.get("source") {
        let spath = format!("{path}.source");
        let src = src
            .as_str()
            .ok_or_else(|| SpecError::invalid(&spath, "expected a dataset name"))?;
        let parent = datasets.iter().find(|d| d.name == src).ok_or_else(|| {
            SpecError::new(
                &spath,
                SpecErrorKind::Unresolved {
                    what: "dataset",
                    name: src.to_string(),
                },
            )
        })?;
        if declared.is_some() {
            return Err(SpecError::invalid(
                format!("{path}.schema"),
                "derived datasets take their schema from the source",
            ));
        }
        return Ok((DatasetInput::Dataset(src.to_string()), parent.schema.clone()));
    }

    let (origin, key) = if let Some(t) = o.get("table") {
        let t = t
            .as_str()
            .ok_or_else(|| SpecError::invalid(format!("{path}.table"), "expected a table name"))?;
        (DataOrigin::Table { table: t.to_string() }, "table")
    } else if let Some(u) = o.get("url") {
        let u = u
            .as_str()
            .ok_or_else(|| SpecError::invalid(format!("{path}.url"), "expected a string"))?;
        (DataOrigin::File { url: u.to_string() }, "url")
    } else {
        let rows = array(&o["values"], &format!("{path}.values"))?.to_vec();
        (DataOrigin::Inline { rows }, "values")
    };
    let kpath = format!("{path}.{key}");

    let schema = match &origin {
        DataOrigin::Inline { rows } => {
            let t = Table::from_json_rows(rows, declared.as_ref())
                .map_err(|e| SpecError::invalid(&kpath, e.to_string()))?;
            t.schema().clone()
        }
        external => {
            let known = catalog.and_then(|c| c.schema_of(external));
            match (catalog, known, declared) {
                (Some(_), None, _) => {
                    let what = match external {
                        DataOrigin::Table { table } => table.clone(),
                        DataOrigin::File { url } => url.clone(),
                        DataOrigin::Inline { .. } => unreachable!(),
                    };
                    return Err(SpecError::new(&kpath, SpecErrorKind::UnknownTable(what)));
                }
                (Some(_), Some(actual), Some(decl)) => {
                    check_declared(&decl, &actual, &format!("{path}.schema"))?;
                    decl
                }
                (Some(_), Some(actual), None) => actual,
                (None, _, Some(decl)) => decl,
                (None, _, None) => {
                    return Err(SpecError::new(path, SpecErrorKind::Missing("schema".into())))
                }
            }
        }
    };
    if let Some(dup) = schema.duplicate_name() {
        return Err(SpecError::new(
            format!("{path}.schema"),
            SpecErrorKind::Duplicate {
                what: "field",
                name: dup.to_string(),
            },
        ));
    }
    sources.push(DataSource {
        name: name.to_string(),
        origin,
        schema: schema.clone(),
    });
    Ok((DatasetInput::Source(name.to_string()), schema))
}

/// Declared fields must exist in the stored table with the same type.
fn check_declared(decl: &Schema, actual: &Schema, path: &str) -> Result<()> {
    for (i, f) in decl.fields().iter().enumerate() {
        match actual.field(&f.name) {
            None => {
                return Err(SpecError::new(
                    format!("{path}[{i}]"),
                    SpecErrorKind::Unresolved {
                        what: "field",
                        name: f.name.clone(),
                    },
                ))
            }
            Some(a) if a.ty != f.ty => {
                return Err(SpecError::new(
                    format!("{path}[{i}].type"),
                    SpecErrorKind::Type(format!(
                        "field '{}' is {} in the table, declared {}",
                        f.name, a.ty, f.ty
                    )),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn parse_schema(v: &Json, path: &str) -> Result<Schema> {
    let ty = |t: &Json, p: &str| -> Result<ScalarType> {
        t.as_str()
            .and_then(ScalarType::parse)
            .ok_or_else(|| SpecError::invalid(p, "type must be number, string or boolean"))
    };
    let fields = match v {
        // {"delay": "number", ...}
        Json::Object(m) => m
            .iter()
            .map(|(k, t)| Ok(Field::new(k.clone(), ty(t, &format!("{path}.{k}"))?)))
            .collect::<Result<Vec<_>>>()?,
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = format!("{path}[{i}]");
                let o = object(f, &p)?;
                let name = string_key(o, "name", &p)?;
                let t = o
                    .get("type")
                    .ok_or_else(|| SpecError::new(&p, SpecErrorKind::Missing("type".into())))?;
                let mut field = Field::new(name, ty(t, &format!("{p}.type"))?);
                if let Some(n) = o.get("nullable") {
                    field.nullable = n.as_bool().ok_or_else(|| {
                        SpecError::invalid(format!("{p}.nullable"), "expected a boolean")
                    })?;
                }
                Ok(field)
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(SpecError::invalid(path, "schema must be an array or object")),
    };
    Ok(Schema(fields))
}

fn parse_signal(v: &Json, path: &str) -> Result<SignalDef> {
    let o = object(v, path)?;
    let name = string_key(o, "name", path)?;
    if !is_identifier(&name) {
        return Err(SpecError::invalid(
            format!("{path}.name"),
            format!("'{name}' is not a valid identifier"),
        ));
    }
    let vpath = format!("{path}.value");
    let value = o
        .get("value")
        .ok_or_else(|| SpecError::new(path, SpecErrorKind::Missing("value".into())))?;
    let value = Value::from_json(value)
        .filter(|v| !v.is_null())
        .ok_or_else(|| SpecError::invalid(&vpath, "initial value must be a non-null scalar"))?;

    let bind = match o.get("bind") {
        None | Some(Json::Null) => Bind::None,
        Some(b) => {
            let bpath = format!("{path}.bind");
            let bo = object(b, &bpath)?;
            let input = string_key(bo, "input", &bpath)?;
            match input.as_str() {
                "range" | "slider" => {
                    let num = |k: &str| -> Result<f64> {
                        bo.get(k).and_then(Json::as_f64).ok_or_else(|| {
                            SpecError::new(&bpath, SpecErrorKind::Missing(k.to_string()))
                        })
                    };
                    let (min, max) = (num("min")?, num("max")?);
                    let step = match bo.get("step") {
                        None => 1.0,
                        Some(s) => s.as_f64().ok_or_else(|| {
                            SpecError::invalid(format!("{bpath}.step"), "expected a number")
                        })?,
                    };
                    if !(min < max) {
                        return Err(SpecError::invalid(&bpath, "slider requires min < max"));
                    }
                    if !(step > 0.0) {
                        return Err(SpecError::invalid(
                            format!("{bpath}.step"),
                            "slider step must be positive",
                        ));
                    }
                    Bind::Slider { min, max, step }
                }
                "select" | "radio" => {
                    let opath = format!("{bpath}.options");
                    let raw = bo.get("options").ok_or_else(|| {
                        SpecError::new(&bpath, SpecErrorKind::Missing("options".into()))
                    })?;
                    let options = array(raw, &opath)?
                        .iter()
                        .enumerate()
                        .map(|(k, x)| {
                            Value::from_json(x)
                                .filter(|x| x.scalar_type() == value.scalar_type())
                                .ok_or_else(|| {
                                    SpecError::invalid(
                                        format!("{opath}[{k}]"),
                                        "options must be scalars of the signal's type",
                                    )
                                })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if options.is_empty() {
                        return Err(SpecError::invalid(opath, "options must not be empty"));
                    }
                    if input == "select" {
                        Bind::Select { options }
                    } else {
                        Bind::Radio { options }
                    }
                }
                "text" => Bind::TextRegex,
                other => {
                    return Err(SpecError::invalid(
                        format!("{bpath}.input"),
                        format!("unsupported bind input '{other}'"),
                    ))
                }
            }
        }
    };
    let def = SignalDef { name, value, bind };
    def.validate(&def.value)
        .map_err(|msg| SpecError::invalid(vpath, msg))?;
    Ok(def)
}

fn parse_transform(v: &Json, path: &str) -> Result<TransformDef> {
    let o = object(v, path)?;
    let kind_name = string_key(o, "type", path)?;
    let kind = TransformKind::parse(&kind_name).ok_or_else(|| {
        SpecError::new(
            format!("{path}.type"),
            SpecErrorKind::UnknownTransform(kind_name.clone()),
        )
    })?;
    let expr = |key: &str| -> Result<crate::expr::Expr> {
        let text = string_key(o, key, path)?;
        parse_expr(&text).map_err(|e| {
            SpecError::new(
                format!("{path}.{key}"),
                SpecErrorKind::ExprSyntax {
                    offset: e.offset,
                    message: e.message,
                },
            )
        })
    };
    let pair = |key: &str, default: [&str; 2]| -> Result<[String; 2]> {
        match o.get(key) {
            None => Ok([default[0].to_string(), default[1].to_string()]),
            Some(v) => {
                let names = string_list(v, &format!("{path}.{key}"))?;
                match <[String; 2]>::try_from(names) {
                    Ok(p) => Ok(p),
                    Err(_) => Err(SpecError::invalid(
                        format!("{path}.{key}"),
                        "expected exactly two names",
                    )),
                }
            }
        }
    };

    Ok(match kind {
        TransformKind::Filter => TransformDef::Filter { expr: expr("expr")? },
        TransformKind::Formula => TransformDef::Formula {
            expr: expr("expr")?,
            output: string_key(o, "as", path)?,
        },
        TransformKind::Extent => TransformDef::Extent {
            field: string_key(o, "field", path)?,
            signal: string_key(o, "signal", path)?,
        },
        TransformKind::Bin => {
            let epath = format!("{path}.extent");
            let extent = match o.get("extent") {
                None => return Err(SpecError::new(path, SpecErrorKind::Missing("extent".into()))),
                Some(Json::Array(a)) => match (a.first().and_then(Json::as_f64), a.get(1).and_then(Json::as_f64)) {
                    (Some(lo), Some(hi)) if a.len() == 2 => ExtentRef::Literal(lo, hi),
                    _ => return Err(SpecError::invalid(epath, "expected [lo, hi]")),
                },
                Some(other) => ExtentRef::Signal(signal_ref(other, &epath)?),
            };
            let mpath = format!("{path}.maxbins");
            let maxbins = match o.get("maxbins") {
                None => Param::Literal(10.0),
                Some(Json::Number(n)) => Param::Literal(n.as_f64().unwrap_or(f64::NAN)),
                Some(other) => Param::Signal(signal_ref(other, &mpath)?),
            };
            TransformDef::Bin {
                field: string_key(o, "field", path)?,
                extent,
                maxbins,
                outputs: pair("as", ["bin0", "bin1"])?,
            }
        }
        TransformKind::Aggregate => {
            let groupby = optional_list(o, "groupby", path)?;
            let ops = match o.get("ops") {
                None => vec!["count".to_string()],
                Some(v) => string_list(v, &format!("{path}.ops"))?,
            };
            let fields: Vec<Option<String>> = match o.get("fields") {
                None => vec![None; ops.len()],
                Some(v) => array(v, &format!("{path}.fields"))?
                    .iter()
                    .enumerate()
                    .map(|(k, f)| match f {
                        Json::Null => Ok(None),
                        Json::String(s) => Ok(Some(s.clone())),
                        _ => Err(SpecError::invalid(
                            format!("{path}.fields[{k}]"),
                            "expected a field name or null",
                        )),
                    })
                    .collect::<Result<_>>()?,
            };
            let outputs = match o.get("as") {
                None => None,
                Some(v) => Some(string_list(v, &format!("{path}.as"))?),
            };
            if fields.len() != ops.len() || outputs.as_ref().is_some_and(|a| a.len() != ops.len()) {
                return Err(SpecError::invalid(
                    path,
                    "ops, fields and as must have the same length",
                ));
            }
            let mut measures = Vec::new();
            for (k, op_name) in ops.iter().enumerate() {
                let op = AggOp::parse(op_name).ok_or_else(|| {
                    SpecError::invalid(
                        format!("{path}.ops[{k}]"),
                        format!("unknown aggregate op '{op_name}'"),
                    )
                })?;
                let field = if op == AggOp::Count { None } else { fields[k].clone() };
                let output = match &outputs {
                    Some(a) => a[k].clone(),
                    None => match &field {
                        Some(f) => format!("{}_{f}", op.name()),
                        None => op.name().to_string(),
                    },
                };
                measures.push(Measure { op, field, output });
            }
            TransformDef::Aggregate { groupby, measures }
        }
        TransformKind::Collect => {
            let spath = format!("{path}.sort");
            let s = o
                .get("sort")
                .ok_or_else(|| SpecError::new(path, SpecErrorKind::Missing("sort".into())))?;
            TransformDef::Collect {
                sort: parse_sort(s, &spath)?,
            }
        }
        TransformKind::Stack => {
            let spath = format!("{path}.sort");
            let sort = match o.get("sort") {
                None => return Err(SpecError::new(path, SpecErrorKind::Missing("sort".into()))),
                Some(s) => {
                    let mut keys = parse_sort(s, &spath)?;
                    if keys.len() != 1 {
                        return Err(SpecError::invalid(spath, "stack sorts by exactly one field"));
                    }
                    keys.remove(0)
                }
            };
            TransformDef::Stack {
                groupby: optional_list(o, "groupby", path)?,
                sort,
                field: string_key(o, "field", path)?,
                outputs: pair("as", ["y0", "y1"])?,
            }
        }
        TransformKind::Project => TransformDef::Project {
            fields: match o.get("fields") {
                None => return Err(SpecError::new(path, SpecErrorKind::Missing("fields".into()))),
                Some(v) => string_list(v, &format!("{path}.fields"))?,
            },
        },
    })
}

fn parse_sort(v: &Json, path: &str) -> Result<Vec<SortKey>> {
    let o = object(v, path)?;
    let fields = match o.get("field") {
        None => return Err(SpecError::new(path, SpecErrorKind::Missing("field".into()))),
        Some(Json::String(s)) => vec![s.clone()],
        Some(f) => string_list(f, &format!("{path}.field"))?,
    };
    let orders = match o.get("order") {
        None => vec![],
        Some(Json::String(s)) => vec![s.clone()],
        Some(f) => string_list(f, &format!("{path}.order"))?,
    };
    if orders.len() > fields.len() {
        return Err(SpecError::invalid(
            format!("{path}.order"),
            "more orders than sort fields",
        ));
    }
    fields
        .into_iter()
        .enumerate()
        .map(|(i, field)| {
            let order = match orders.get(i).map(String::as_str) {
                None | Some("ascending") => SortOrder::Ascending,
                Some("descending") => SortOrder::Descending,
                Some(other) => {
                    return Err(SpecError::invalid(
                        format!("{path}.order"),
                        format!("unknown sort order '{other}'"),
                    ))
                }
            };
            Ok(SortKey { field, order })
        })
        .collect()
}

fn parse_mark(v: &Json, path: &str, datasets: &[Dataset]) -> Result<MarkStub> {
    let o = object(v, path)?;
    let mark_type = string_key(o, "type", path)?;
    let name = o.get("name").and_then(Json::as_str).map(str::to_string);
    let fpath = format!("{path}.from");
    let from = o
        .get("from")
        .ok_or_else(|| SpecError::new(path, SpecErrorKind::Missing("from".into())))?;
    let from = string_key(object(from, &fpath)?, "data", &fpath)?;
    let dataset = datasets.iter().find(|d| d.name == from).ok_or_else(|| {
        SpecError::new(
            format!("{fpath}.data"),
            SpecErrorKind::Unresolved {
                what: "dataset",
                name: from.clone(),
            },
        )
    })?;
    let mut fields = Vec::new();
    if let Some(enc) = o.get("encode") {
        collect_fields(enc, &format!("{path}.encode"), &mut fields);
    }
    let mut names = Vec::new();
    for (p, f) in fields {
        if dataset.schema.field(&f).is_none() {
            return Err(SpecError::new(
                p,
                SpecErrorKind::Unresolved {
                    what: "field",
                    name: f,
                },
            ));
        }
        if !names.contains(&f) {
            names.push(f);
        }
    }
    Ok(MarkStub {
        name,
        mark_type,
        from,
        fields: names,
    })
}

fn collect_fields(v: &Json, path: &str, out: &mut Vec<(String, String)>) {
    match v {
        Json::Object(m) => {
            for (k, x) in m {
                let p = format!("{path}.{k}");
                match (k.as_str(), x) {
                    ("field", Json::String(s)) => out.push((p, s.clone())),
                    _ => collect_fields(x, &p, out),
                }
            }
        }
        Json::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                collect_fields(x, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

fn transform_error(e: TransformError, def: &TransformDef, path: &str) -> SpecError {
    let expr_path = || match def {
        TransformDef::Filter { .. } | TransformDef::Formula { .. } => format!("{path}.expr"),
        _ => path.to_string(),
    };
    match e {
        TransformError::UnknownField(name) | TransformError::Expr(TypeError::UnknownField(name)) => {
            SpecError::new(
                expr_path(),
                SpecErrorKind::Unresolved {
                    what: "field",
                    name,
                },
            )
        }
        TransformError::UnknownSignal(name)
        | TransformError::Expr(TypeError::UnknownSignal(name)) => SpecError::new(
            expr_path(),
            SpecErrorKind::Unresolved {
                what: "signal",
                name,
            },
        ),
        TransformError::Expr(t) => SpecError::new(expr_path(), SpecErrorKind::Type(t.to_string())),
        TransformError::FieldType { .. } | TransformError::SignalType { .. } => {
            SpecError::new(path, SpecErrorKind::Type(e.to_string()))
        }
        TransformError::Invalid(msg) => SpecError::invalid(path, msg),
    }
}

fn signal_ref(v: &Json, path: &str) -> Result<String> {
    v.get("signal")
        .and_then(Json::as_str)
        .map(str::to_string)
        .ok_or_else(|| SpecError::invalid(path, "expected a literal or {\"signal\": name}"))
}

fn object<'a>(v: &'a Json, path: &str) -> Result<&'a Map<String, Json>> {
    v.as_object()
        .ok_or_else(|| SpecError::invalid(path, "expected an object"))
}

fn array<'a>(v: &'a Json, path: &str) -> Result<&'a [Json]> {
    v.as_array()
        .map(Vec::as_slice)
        .ok_or_else(|| SpecError::invalid(path, "expected an array"))
}

fn string_key(o: &Map<String, Json>, key: &str, path: &str) -> Result<String> {
    match o.get(key) {
        None => Err(SpecError::new(path, SpecErrorKind::Missing(key.to_string()))),
        Some(Json::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(_) => Err(SpecError::invalid(
            format!("{path}.{key}"),
            "expected a non-empty string",
        )),
    }
}

fn string_list(v: &Json, path: &str) -> Result<Vec<String>> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| SpecError::invalid(format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

fn optional_list(o: &Map<String, Json>, key: &str, path: &str) -> Result<Vec<String>> {
    match o.get(key) {
        None => Ok(Vec::new()),
        Some(v) => string_list(v, &format!("{path}.{key}")),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
        && !matches!(s, "true" | "false" | "datum" | "null")
}
