//! Seeded synthetic data: flights- and census-shaped tables, and random
//! (spec, table, signal values) cases for equivalence testing.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use crate::expr::{BinaryOp, Func, UnaryOp};
use crate::spec::{AggOp, SortOrder, TransformKind};
use crate::sql::{RunningSum, SqlAggregate, SqlExpr, SqlQuery};
use crate::table::Table;
use crate::value::{Field, ScalarType, Schema, Value};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn flights_schema() -> Schema {
    Schema(vec![
        Field::new("delay", ScalarType::Number),
        Field::new("distance", ScalarType::Number),
    ])
}

/// `rows` flights with integer `delay` (minutes, skewed right, about 1% null)
/// and `distance` (miles).
pub fn flights(rows: usize, seed: u64) -> Table {
    let mut r = rng(seed);
    let mut delay = Vec::with_capacity(rows);
    let mut distance = Vec::with_capacity(rows);
    for _ in 0..rows {
        let d = if r.gen_bool(0.01) {
            None
        } else {
            let z = normal(&mut r);
            let late = if r.gen_bool(0.2) { r.gen_range(0.0..180.0) } else { 0.0 };
            Some((z * 15.0 + late - 5.0).round().clamp(-60.0, 600.0))
        };
        delay.push(d);
        distance.push(Some(r.gen_range(80.0f64..2800.0).round()));
    }
    Table::from_columns(
        flights_schema(),
        vec![crate::table::Column::Number(delay), crate::table::Column::Number(distance)],
    )
    .expect("columns match schema")
}

const JOBS: [&str; 12] = [
    "Accountant", "Baker", "Carpenter", "Clerk", "Engineer", "Farmer", "Laborer", "Machinist",
    "Nurse", "Salesman", "Teacher", "Tailor",
];

/// Census-shaped table: one row per (year, job, sex).
pub fn jobs(seed: u64) -> Table {
    let mut r = rng(seed);
    let schema = Schema(vec![
        Field::new("year", ScalarType::Number),
        Field::new("job", ScalarType::String),
        Field::new("sex", ScalarType::String),
        Field::new("count", ScalarType::Number),
    ]);
    let mut rows = Vec::new();
    for year in (1850..=2000).step_by(10) {
        for job in JOBS {
            for sex in ["men", "women"] {
                rows.push(vec![
                    Value::number(year as f64),
                    Value::string(job),
                    Value::string(sex),
                    Value::number(r.gen_range(0..50_000) as f64),
                ]);
            }
        }
    }
    Table::from_rows(schema, rows).expect("rows match schema")
}

/// A random spec over table `t`, its data, and signal values to apply.
#[derive(Clone, Debug)]
pub struct RandomCase {
    pub seed: u64,
    pub spec: Json,
    pub table: Table,
    pub signals: HashMap<String, Value>,
}

impl RandomCase {
    pub fn spec_text(&self) -> String {
        self.spec.to_string()
    }
}

const STRINGS: [&str; 4] = ["x", "y", "z", "w"];
const REGEXES: [&str; 4] = ["", "^x", "y|z", "."];

fn random_table(r: &mut ChaCha8Rng, rows: usize) -> Table {
    let schema = Schema(vec![
        Field::new("a", ScalarType::Number),
        Field::new("b", ScalarType::Number),
        Field::new("c", ScalarType::String),
        Field::new("d", ScalarType::Boolean),
    ]);
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let null = |r: &mut ChaCha8Rng| r.gen_bool(0.05);
        let a = if null(r) { Value::Null } else { Value::number(r.gen_range(-5..15) as f64) };
        // halves keep sums exact while exercising fractional values
        let b = if null(r) { Value::Null } else { Value::number(r.gen_range(-20..40) as f64 / 2.0) };
        let c = if null(r) { Value::Null } else { Value::string(*STRINGS.choose(r).unwrap()) };
        let d = if null(r) { Value::Null } else { Value::Boolean(r.gen_bool(0.5)) };
        out.push(vec![a, b, c, d]);
    }
    Table::from_rows(schema, out).expect("rows match schema")
}

struct Builder<'r> {
    r: &'r mut ChaCha8Rng,
    fresh: usize,
}

impl Builder<'_> {
    fn name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn pick<'a>(&mut self, fields: &'a [(String, ScalarType)], ty: ScalarType) -> Option<&'a str> {
        let of: Vec<&str> = fields
            .iter()
            .filter(|f| f.1 == ty)
            .map(|f| f.0.as_str())
            .collect();
        of.choose(self.r).copied()
    }

    fn filter(&mut self, fields: &[(String, ScalarType)]) -> Option<Json> {
        let n = self.pick(fields, ScalarType::Number);
        let s = self.pick(fields, ScalarType::String);
        let b = self.pick(fields, ScalarType::Boolean);
        let mut options: Vec<String> = Vec::new();
        if let Some(n) = n {
            options.push(format!("datum.{n} > p"));
            options.push(format!("datum.{n} % 3 == 1"));
            options.push(format!("abs(datum.{n} - p) <= 4"));
        }
        if let Some(s) = s {
            options.push(format!("datum.{s} == q || datum.{s} == 'w'"));
            options.push(format!("test(r, datum.{s})"));
        }
        if let Some(b) = b {
            options.push(format!("datum.{b}"));
            if let Some(n) = n {
                options.push(format!("!datum.{b} && datum.{n} < 5"));
            }
        }
        let expr = options.choose(self.r)?.clone();
        Some(json!({"type": "filter", "expr": expr}))
    }

    fn formula(&mut self, fields: &mut Vec<(String, ScalarType)>) -> Option<Json> {
        let n = self.pick(fields, ScalarType::Number)?.to_string();
        let m = self.pick(fields, ScalarType::Number)?.to_string();
        let (expr, ty) = match self.r.gen_range(0..7) {
            0 => (format!("datum.{n} * 2 + datum.{m}"), ScalarType::Number),
            1 => (format!("datum.{n} / datum.{m}"), ScalarType::Number),
            2 => (format!("sqrt(datum.{n})"), ScalarType::Number),
            3 => (format!("floor(datum.{n} / 3)"), ScalarType::Number),
            4 => (format!("min(datum.{n}, p)"), ScalarType::Number),
            5 => (format!("datum.{n} - mb"), ScalarType::Number),
            _ => (format!("datum.{n} >= datum.{m}"), ScalarType::Boolean),
        };
        let out = self.name("f");
        fields.push((out.clone(), ty));
        Some(json!({"type": "formula", "expr": expr, "as": out}))
    }

    fn bin(&mut self, fields: &mut Vec<(String, ScalarType)>) -> Option<Vec<Json>> {
        let n = self.pick(fields, ScalarType::Number)?.to_string();
        let mut out = Vec::new();
        let extent = if self.r.gen_bool(0.75) {
            let sig = self.name("e");
            out.push(json!({"type": "extent", "field": n, "signal": sig}));
            json!({"signal": sig})
        } else {
            json!([-5, 20])
        };
        let maxbins = if self.r.gen_bool(0.6) {
            json!({"signal": "mb"})
        } else {
            json!(self.r.gen_range(2..12))
        };
        let b = self.name("b");
        let (b0, b1) = (format!("{b}_0"), format!("{b}_1"));
        fields.push((b0.clone(), ScalarType::Number));
        fields.push((b1.clone(), ScalarType::Number));
        out.push(json!({"type": "bin", "field": n, "extent": extent, "maxbins": maxbins, "as": [b0, b1]}));
        Some(out)
    }

    fn aggregate(&mut self, fields: &mut Vec<(String, ScalarType)>) -> Json {
        let mut keys: Vec<(String, ScalarType)> = fields.clone();
        keys.shuffle(self.r);
        keys.truncate(self.r.gen_range(0..=2));
        let mut ops = vec![json!("count")];
        let mut of = vec![Json::Null];
        let mut names = vec![self.name("m")];
        if let Some(n) = self.pick(fields, ScalarType::Number).map(str::to_string) {
            let op = *["sum", "mean", "min", "max"].choose(self.r).unwrap();
            ops.push(json!(op));
            of.push(json!(n));
            names.push(self.name("m"));
        }
        let groupby: Vec<&str> = keys.iter().map(|k| k.0.as_str()).collect();
        let t = json!({"type": "aggregate", "groupby": groupby, "ops": ops, "fields": of, "as": names});
        let mut next = keys.clone();
        next.extend(names.into_iter().map(|n| (n, ScalarType::Number)));
        *fields = next;
        t
    }

    fn collect(&mut self, fields: &[(String, ScalarType)]) -> Json {
        let mut f: Vec<&str> = fields.iter().map(|f| f.0.as_str()).collect();
        f.shuffle(self.r);
        f.truncate(self.r.gen_range(1..=2).min(f.len()));
        let order: Vec<&str> = f
            .iter()
            .map(|_| *["ascending", "descending"].choose(self.r).unwrap())
            .collect();
        json!({"type": "collect", "sort": {"field": f, "order": order}})
    }

    fn stack(&mut self, fields: &mut Vec<(String, ScalarType)>) -> Option<Json> {
        let n = self.pick(fields, ScalarType::Number)?.to_string();
        let groupby: Vec<String> = fields
            .choose(self.r)
            .filter(|f| f.0 != n && self.r.gen_bool(0.6))
            .map(|f| vec![f.0.clone()])
            .unwrap_or_default();
        let sort = fields.choose(self.r)?.0.clone();
        let s = self.name("s");
        let (s0, s1) = (format!("{s}_0"), format!("{s}_1"));
        fields.push((s0.clone(), ScalarType::Number));
        fields.push((s1.clone(), ScalarType::Number));
        Some(json!({
            "type": "stack", "groupby": groupby, "field": n,
            "sort": {"field": sort, "order": "ascending"}, "as": [s0, s1]
        }))
    }

    fn project(&mut self, fields: &mut Vec<(String, ScalarType)>) -> Json {
        let mut keep = fields.clone();
        keep.shuffle(self.r);
        keep.truncate(self.r.gen_range(1..=fields.len()));
        let names: Vec<String> = keep.iter().map(|f| f.0.clone()).collect();
        *fields = keep;
        json!({"type": "project", "fields": names})
    }

    fn pipeline(&mut self, fields: &mut Vec<(String, ScalarType)>, max_len: usize) -> Vec<Json> {
        let len = self.r.gen_range(0..=max_len);
        let mut out = Vec::new();
        while out.len() < len {
            let step = match self.r.gen_range(0..8) {
                0 => self.filter(fields).map(|t| vec![t]),
                1 => self.formula(fields).map(|t| vec![t]),
                2 => self.bin(fields),
                3 => Some(vec![self.aggregate(fields)]),
                4 => Some(vec![self.collect(fields)]),
                5 => self.stack(fields).map(|t| vec![t]),
                6 => Some(vec![self.project(fields)]),
                _ => self.filter(fields).map(|t| vec![t]),
            };
            match step {
                Some(ts) => out.extend(ts),
                None => out.push(self.collect(fields)),
            }
        }
        out
    }
}

/// A random linear-pipeline spec (one or two datasets, up to ~6 transforms
/// each) over a random table of at most `max_rows` rows, with random
/// values for its four signals `p`, `q`, `mb` and `r`.
pub fn random_case(seed: u64, max_rows: usize) -> RandomCase {
    let mut r = rng(seed);
    let rows = r.gen_range(0..=max_rows);
    let table = random_table(&mut r, rows);
    let base: Vec<(String, ScalarType)> = table
        .schema()
        .fields()
        .iter()
        .map(|f| (f.name.clone(), f.ty))
        .collect();
    let mut b = Builder { r: &mut r, fresh: 0 };
    let mut f1 = base.clone();
    let t1 = b.pipeline(&mut f1, 5);
    let mut data = vec![
        json!({"name": "t", "table": "t", "schema": [
            {"name": "a", "type": "number"}, {"name": "b", "type": "number"},
            {"name": "c", "type": "string"}, {"name": "d", "type": "boolean"}
        ]}),
        json!({"name": "d1", "source": "t", "transform": t1}),
    ];
    match b.r.gen_range(0..3) {
        0 => {
            let mut f2 = f1.clone();
            let t2 = b.pipeline(&mut f2, 3);
            data.push(json!({"name": "d2", "source": "d1", "transform": t2}));
        }
        1 => {
            let mut f2 = base;
            let t2 = b.pipeline(&mut f2, 4);
            data.push(json!({"name": "d2", "source": "t", "transform": t2}));
        }
        _ => {}
    }
    let spec = json!({
        "vegaplus_version": 1,
        "signals": signals_json(),
        "data": data
    });
    RandomCase {
        seed,
        spec,
        table,
        signals: random_signals(&mut r),
    }
}

fn signals_json() -> Json {
    json!([
        {"name": "p", "value": 3, "bind": {"input": "range", "min": 0, "max": 10, "step": 1}},
        {"name": "q", "value": "x", "bind": {"input": "radio", "options": STRINGS}},
        {"name": "mb", "value": 6, "bind": {"input": "range", "min": 2, "max": 20, "step": 2}},
        {"name": "r", "value": "", "bind": {"input": "text"}}
    ])
}

fn random_signals(r: &mut ChaCha8Rng) -> HashMap<String, Value> {
    let mut signals = HashMap::new();
    signals.insert("p".into(), Value::number(r.gen_range(0..=10) as f64));
    signals.insert("q".into(), Value::string(*STRINGS.choose(r).unwrap()));
    signals.insert("mb".into(), Value::number((r.gen_range(1..=10) * 2) as f64));
    signals.insert("r".into(), Value::string(*REGEXES.choose(r).unwrap()));
    signals
}

fn single_dataset_case(seed: u64, r: &mut ChaCha8Rng, table: Table, transforms: Vec<Json>) -> RandomCase {
    let spec = json!({
        "vegaplus_version": 1,
        "signals": signals_json(),
        "data": [
            {"name": "t", "table": "t", "schema": [
                {"name": "a", "type": "number"}, {"name": "b", "type": "number"},
                {"name": "c", "type": "string"}, {"name": "d", "type": "boolean"}
            ]},
            {"name": "d1", "source": "t", "transform": transforms}
        ]
    });
    RandomCase {
        seed,
        spec,
        table,
        signals: random_signals(r),
    }
}

fn base_fields() -> Vec<(String, ScalarType)> {
    vec![
        ("a".into(), ScalarType::Number),
        ("b".into(), ScalarType::Number),
        ("c".into(), ScalarType::String),
        ("d".into(), ScalarType::Boolean),
    ]
}

/// A spec whose only dataset ends in one transform of `kind` over the raw
/// table. A bin may be preceded by the extent it reads.
pub fn random_operator_case(kind: TransformKind, seed: u64, max_rows: usize) -> RandomCase {
    let mut r = rng(seed ^ 0x6f70);
    let rows = r.gen_range(0..=max_rows);
    let table = random_table(&mut r, rows);
    let mut fields = base_fields();
    let mut b = Builder { r: &mut r, fresh: 0 };
    let transforms = match kind {
        TransformKind::Filter => vec![b.filter(&fields).expect("base has every type")],
        TransformKind::Formula => vec![b.formula(&mut fields).expect("base has numbers")],
        TransformKind::Extent => {
            let field = b.pick(&fields, ScalarType::Number).expect("base has numbers").to_string();
            vec![json!({"type": "extent", "field": field, "signal": "e1"})]
        }
        TransformKind::Bin => b.bin(&mut fields).expect("base has numbers"),
        TransformKind::Aggregate => vec![b.aggregate(&mut fields)],
        TransformKind::Collect => vec![b.collect(&fields)],
        TransformKind::Stack => vec![b.stack(&mut fields).expect("base has numbers")],
        TransformKind::Project => vec![b.project(&mut fields)],
    };
    single_dataset_case(seed, &mut r, table, transforms)
}

/// A spec with one linear dataset of at most `max_transforms` transforms.
pub fn random_pipeline_case(seed: u64, max_transforms: usize, max_rows: usize) -> RandomCase {
    let mut r = rng(seed ^ 0x7069);
    let rows = r.gen_range(0..=max_rows);
    let table = random_table(&mut r, rows);
    let mut fields = base_fields();
    let mut b = Builder { r: &mut r, fresh: 0 };
    let mut transforms = b.pipeline(&mut fields, max_transforms);
    transforms.truncate(max_transforms);
    single_dataset_case(seed, &mut r, table, transforms)
}

// ---- random relational queries

/// Table `t` with columns a, b (number), c (string), d (boolean).
pub fn random_query_table(seed: u64, max_rows: usize) -> Table {
    let mut r = rng(seed ^ 0x7174);
    let rows = r.gen_range(0..=max_rows);
    random_table(&mut r, rows)
}

struct QueryGen<'r> {
    r: &'r mut ChaCha8Rng,
    fresh: usize,
}

type Cols = Vec<(String, ScalarType)>;

impl QueryGen<'_> {
    fn alias(&mut self) -> String {
        self.fresh += 1;
        format!("x{}", self.fresh)
    }

    fn col(&mut self, cols: &Cols, ty: ScalarType) -> Option<SqlExpr> {
        let of: Vec<&String> = cols.iter().filter(|c| c.1 == ty).map(|c| &c.0).collect();
        of.choose(self.r).map(|c| SqlExpr::column(c.as_str()))
    }

    fn num_lit(&mut self) -> SqlExpr {
        SqlExpr::number(self.r.gen_range(-8..16) as f64 / 2.0)
    }

    fn num(&mut self, cols: &Cols, depth: u32) -> SqlExpr {
        let leaf = depth == 0 || self.r.gen_bool(0.3);
        if leaf {
            return match self.col(cols, ScalarType::Number) {
                Some(c) if self.r.gen_bool(0.75) => c,
                _ => self.num_lit(),
            };
        }
        let d = depth - 1;
        match self.r.gen_range(0..7) {
            0 | 1 => {
                let op = *[BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Mod]
                    .choose(self.r)
                    .unwrap();
                SqlExpr::binary(op, self.num(cols, d), self.num(cols, d))
            }
            2 => SqlExpr::Unary {
                op: UnaryOp::Neg,
                operand: Box::new(self.num(cols, d)),
            },
            3 => {
                let func = *[Func::Abs, Func::Floor, Func::Ceil, Func::Sqrt].choose(self.r).unwrap();
                SqlExpr::Call {
                    func,
                    args: vec![self.num(cols, d)],
                }
            }
            4 => {
                let func = *[Func::Min, Func::Max].choose(self.r).unwrap();
                SqlExpr::Call {
                    func,
                    args: vec![self.num(cols, d), self.num(cols, d)],
                }
            }
            5 => SqlExpr::Coalesce(vec![self.num(cols, d), self.num_lit()]),
            _ => SqlExpr::BinIndex {
                offset: Box::new(self.num(cols, d)),
                last: self.r.gen_range(0..6) as f64,
            },
        }
    }

    fn boolean(&mut self, cols: &Cols, depth: u32) -> SqlExpr {
        let leaf = depth == 0 || self.r.gen_bool(0.25);
        if leaf {
            return match self.col(cols, ScalarType::Boolean) {
                Some(c) if self.r.gen_bool(0.5) => c,
                _ => SqlExpr::boolean(self.r.gen_bool(0.7)),
            };
        }
        let d = depth - 1;
        match self.r.gen_range(0..7) {
            0 | 1 => {
                let op = *[BinaryOp::Lt, BinaryOp::Le, BinaryOp::Gt, BinaryOp::Ge, BinaryOp::Eq, BinaryOp::Ne]
                    .choose(self.r)
                    .unwrap();
                SqlExpr::binary(op, self.num(cols, d), self.num(cols, d))
            }
            2 => {
                let s = self.string(cols);
                let op = *[BinaryOp::Eq, BinaryOp::Ne].choose(self.r).unwrap();
                SqlExpr::binary(op, s, SqlExpr::Literal(Value::string(*STRINGS.choose(self.r).unwrap())))
            }
            3 => {
                let op = *[BinaryOp::And, BinaryOp::Or].choose(self.r).unwrap();
                SqlExpr::binary(op, self.boolean(cols, d), self.boolean(cols, d))
            }
            4 => SqlExpr::not(self.boolean(cols, d)),
            5 => {
                let ty = *[ScalarType::Number, ScalarType::String, ScalarType::Boolean]
                    .choose(self.r)
                    .unwrap();
                let e = self.col(cols, ty).unwrap_or_else(|| self.num_lit());
                SqlExpr::IsNull {
                    expr: Box::new(e),
                    negated: self.r.gen_bool(0.5),
                }
            }
            _ => SqlExpr::Call {
                func: Func::Test,
                args: vec![
                    SqlExpr::Literal(Value::string(*REGEXES.choose(self.r).unwrap())),
                    self.string(cols),
                ],
            },
        }
    }

    fn string(&mut self, cols: &Cols) -> SqlExpr {
        match self.col(cols, ScalarType::String) {
            Some(c) if self.r.gen_bool(0.8) => c,
            _ => SqlExpr::Literal(Value::string(*STRINGS.choose(self.r).unwrap())),
        }
    }

    fn all_ordered(&mut self, cols: &Cols) -> Vec<(String, SortOrder)> {
        let mut keys: Vec<(String, SortOrder)> = cols
            .iter()
            .map(|c| {
                let o = if self.r.gen_bool(0.5) { SortOrder::Ascending } else { SortOrder::Descending };
                (c.0.clone(), o)
            })
            .collect();
        keys.shuffle(self.r);
        keys
    }

    /// One operator over `q`; updates `cols` to its output.
    fn step(&mut self, q: SqlQuery, cols: &mut Cols) -> SqlQuery {
        let input = Box::new(q);
        match self.r.gen_range(0..9) {
            0 | 1 => SqlQuery::Select {
                predicate: self.boolean(cols, 3),
                input,
            },
            2 | 3 => {
                let mut keep = cols.clone();
                keep.shuffle(self.r);
                keep.truncate(self.r.gen_range(1..=cols.len()));
                let mut items: Vec<(SqlExpr, String)> =
                    keep.iter().map(|c| (SqlExpr::column(c.0.as_str()), c.0.clone())).collect();
                for _ in 0..self.r.gen_range(0..3) {
                    let a = self.alias();
                    if self.r.gen_bool(0.7) {
                        items.push((self.num(cols, 3), a.clone()));
                        keep.push((a, ScalarType::Number));
                    } else {
                        items.push((self.boolean(cols, 2), a.clone()));
                        keep.push((a, ScalarType::Boolean));
                    }
                }
                *cols = keep;
                SqlQuery::Project { items, input }
            }
            4 => {
                let mut keys: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
                keys.shuffle(self.r);
                keys.truncate(self.r.gen_range(0..=2.min(keys.len())));
                let mut aggs = vec![SqlAggregate {
                    op: AggOp::Count,
                    arg: None,
                    alias: self.alias(),
                }];
                for _ in 0..self.r.gen_range(0..3) {
                    let op = *[AggOp::Sum, AggOp::Mean, AggOp::Min, AggOp::Max].choose(self.r).unwrap();
                    aggs.push(SqlAggregate {
                        op,
                        arg: Some(self.num(cols, 2)),
                        alias: self.alias(),
                    });
                }
                let mut out: Cols = keys
                    .iter()
                    .map(|k| cols.iter().find(|c| c.0 == *k).unwrap().clone())
                    .collect();
                out.extend(aggs.iter().map(|a| (a.alias.clone(), ScalarType::Number)));
                *cols = out;
                SqlQuery::GroupBy {
                    keys,
                    aggs,
                    nonempty: self.r.gen_bool(0.5),
                    input,
                }
            }
            5 => {
                let mut partition: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
                partition.shuffle(self.r);
                partition.truncate(self.r.gen_range(0..=1));
                let order = self.all_ordered(cols);
                let alias = self.alias();
                let sums = vec![RunningSum {
                    expr: self.num(cols, 2),
                    alias: alias.clone(),
                }];
                cols.push((alias, ScalarType::Number));
                SqlQuery::Window {
                    partition,
                    order,
                    sums,
                    input,
                }
            }
            6 => {
                let keys = self.all_ordered(cols);
                SqlQuery::Limit {
                    n: self.r.gen_range(0..20),
                    input: Box::new(SqlQuery::OrderBy { keys, input }),
                }
            }
            7 => {
                let mut keys = self.all_ordered(cols);
                keys.truncate(2);
                SqlQuery::OrderBy { keys, input }
            }
            _ => self.binned_group(*input, cols),
        }
    }

    /// The shape the bin translation produces: a hidden index, boundaries
    /// derived from it, then a grouping on the boundaries.
    fn binned_group(&mut self, q: SqlQuery, cols: &mut Cols) -> SqlQuery {
        let Some(field) = self.col(cols, ScalarType::Number) else {
            return q;
        };
        let start = self.r.gen_range(-10..0) as f64;
        let step = *[0.5, 1.0, 2.5, 5.0].choose(self.r).unwrap();
        let last = self.r.gen_range(1..8) as f64;
        let offset = SqlExpr::binary(
            BinaryOp::Div,
            SqlExpr::binary(BinaryOp::Sub, field.clone(), SqlExpr::number(start)),
            SqlExpr::number(step),
        );
        let mut items: Vec<(SqlExpr, String)> = cols.iter().map(|c| (SqlExpr::column(c.0.as_str()), c.0.clone())).collect();
        items.push((
            SqlExpr::BinIndex {
                offset: Box::new(offset),
                last,
            },
            "__bin_index".into(),
        ));
        let indexed = SqlQuery::Project {
            items,
            input: Box::new(SqlQuery::Select {
                predicate: SqlExpr::is_not_null(field),
                input: Box::new(q),
            }),
        };
        let (k0, k1) = (self.alias(), self.alias());
        let lo = SqlExpr::binary(
            BinaryOp::Add,
            SqlExpr::number(start),
            SqlExpr::binary(BinaryOp::Mul, SqlExpr::number(step), SqlExpr::column("__bin_index")),
        );
        let hi = SqlExpr::binary(BinaryOp::Add, lo.clone(), SqlExpr::number(step));
        let mut bounds: Vec<(SqlExpr, String)> = vec![(lo, k0.clone()), (hi, k1.clone())];
        let other: Vec<(String, ScalarType)> = cols.iter().filter(|_| self.r.gen_bool(0.3)).cloned().collect();
        bounds.extend(other.iter().map(|c| (SqlExpr::column(c.0.as_str()), c.0.clone())));
        let mut keys = vec![k0.clone(), k1.clone()];
        keys.extend(other.iter().map(|c| c.0.clone()));
        let visible: Cols = if self.r.gen_bool(0.5) {
            let rest: Vec<(String, ScalarType)> = cols.iter().filter(|c| !other.contains(c)).cloned().collect();
            bounds.extend(rest.iter().map(|c| (SqlExpr::column(c.0.as_str()), c.0.clone())));
            other.iter().chain(&rest).cloned().collect()
        } else {
            other.clone()
        };
        let mut aggs = vec![SqlAggregate {
            op: AggOp::Count,
            arg: None,
            alias: self.alias(),
        }];
        if let Some(n) = self.col(&visible, ScalarType::Number) {
            aggs.push(SqlAggregate {
                op: *[AggOp::Sum, AggOp::Mean, AggOp::Min, AggOp::Max].choose(self.r).unwrap(),
                arg: Some(n),
                alias: self.alias(),
            });
        }
        let mut out: Cols = vec![(k0, ScalarType::Number), (k1, ScalarType::Number)];
        out.extend(other);
        out.extend(aggs.iter().map(|a| (a.alias.clone(), ScalarType::Number)));
        *cols = out;
        SqlQuery::GroupBy {
            keys,
            aggs,
            nonempty: true,
            input: Box::new(SqlQuery::Project {
                items: bounds,
                input: Box::new(indexed),
            }),
        }
    }
}

/// A random, valid query of at most `max_depth` levels over table `t` (see
/// [`random_query_table`]).
pub fn random_query(seed: u64, max_depth: usize) -> SqlQuery {
    let mut r = rng(seed ^ 0x7175);
    let mut cols = base_fields();
    let all: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
    let mut q = SqlQuery::scan("t", all);
    let target = r.gen_range(1..=max_depth.max(1));
    let mut g = QueryGen { r: &mut r, fresh: 0 };
    while q.depth() < target {
        let next = g.step(q.clone(), &mut cols);
        if next.depth() > max_depth {
            break;
        }
        q = next;
    }
    q
}
