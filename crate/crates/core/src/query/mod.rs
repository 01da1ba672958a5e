//! The aggregate batch model: queries `Q(F; a_1, ..., a_l)` over the natural
//! join of all relations, where each aggregate is a SUM of products of UDAF
//! factors, plus the registry for named and dynamic functions.

mod parse;

pub use parse::parse_batch;

use crate::catalog::AttrId;
use crate::Literal;
use crate::Scalar;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("attribute `{0:?}` is not bound in the tuple")]
    UnboundAttribute(AttrId),
    #[error("factor is not dynamic")]
    NotDynamic,
    #[error("wrong argument count for function `{0}`")]
    WrongArity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DynParamId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn test(self, key: i64, threshold: i64) -> bool {
        match self {
            CmpOp::Lt => key < threshold,
            CmpOp::Le => key <= threshold,
            CmpOp::Eq => key == threshold,
            CmpOp::Ge => key >= threshold,
            CmpOp::Gt => key > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

/// A selection threshold: fixed at construction, or a slot in the registry
/// that can be rebound between executions without replanning.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Static(Literal),
    Dynamic(DynParamId),
}

/// One multiplicative factor of a UDAF product.
#[derive(Debug, Clone, PartialEq)]
pub enum UdafFactor<S> {
    Constant(S),
    /// The value of an attribute.
    Identity(AttrId),
    /// attr^exponent.
    Power(AttrId, u32),
    /// Kronecker delta `1_{attr op t}`; 1.0 when the condition holds.
    Kronecker {
        attr: AttrId,
        op: CmpOp,
        threshold: Param,
    },
    /// `1_{attr in set}`.
    InSet { attr: AttrId, set: Param },
    /// A registered function applied to the given attributes.
    Named { func: FuncId, args: Vec<AttrId> },
}

impl<S: Scalar> UdafFactor<S> {
    /// The attributes the factor reads.
    pub fn attrs(&self) -> Vec<AttrId> {
        match self {
            UdafFactor::Constant(_) => vec![],
            UdafFactor::Identity(a) | UdafFactor::Power(a, _) => vec![*a],
            UdafFactor::Kronecker { attr, .. } | UdafFactor::InSet { attr, .. } => vec![*attr],
            UdafFactor::Named { args, .. } => args.clone(),
        }
    }

    /// Canonical byte encoding, used for slot dedup across queries.
    pub fn canon(&self, out: &mut Vec<u8>) {
        fn lit(out: &mut Vec<u8>, l: &Literal) {
            match l {
                Literal::Int(v) => {
                    out.push(0);
                    out.extend(v.to_le_bytes());
                }
                Literal::Float(v) => {
                    out.push(1);
                    out.extend(v.to_bits().to_le_bytes());
                }
                Literal::Str(s) => {
                    out.push(2);
                    out.extend(s.as_bytes());
                    out.push(0);
                }
            }
        }
        fn param(out: &mut Vec<u8>, p: &Param) {
            match p {
                Param::Static(l) => {
                    out.push(0);
                    lit(out, l);
                }
                Param::Dynamic(id) => {
                    out.push(1);
                    out.extend(id.0.to_le_bytes());
                }
            }
        }
        match self {
            UdafFactor::Constant(c) => {
                out.push(0);
                out.extend(c.to_f64().unwrap().to_bits().to_le_bytes());
            }
            UdafFactor::Identity(a) => {
                out.push(1);
                out.extend(a.0.to_le_bytes());
            }
            UdafFactor::Power(a, e) => {
                out.push(2);
                out.extend(a.0.to_le_bytes());
                out.extend(e.to_le_bytes());
            }
            UdafFactor::Kronecker { attr, op, threshold } => {
                out.push(3);
                out.extend(attr.0.to_le_bytes());
                out.push(*op as u8);
                param(out, threshold);
            }
            UdafFactor::InSet { attr, set } => {
                out.push(4);
                out.extend(attr.0.to_le_bytes());
                param(out, set);
            }
            UdafFactor::Named { func, args } => {
                out.push(5);
                out.extend(func.0.to_le_bytes());
                for a in args {
                    out.extend(a.0.to_le_bytes());
                }
            }
        }
    }
}

/// A product of factors (one term of a UDAF sum).
pub type Product<S> = Vec<UdafFactor<S>>;

/// `alpha = sum_j prod_k f_jk`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateExpr<S> {
    pub terms: Vec<Product<S>>,
}

impl<S: Scalar> AggregateExpr<S> {
    pub fn product(factors: Product<S>) -> AggregateExpr<S> {
        AggregateExpr {
            terms: vec![factors],
        }
    }

    pub fn count() -> AggregateExpr<S> {
        AggregateExpr::product(vec![UdafFactor::Constant(S::one())])
    }

    pub fn sum_of(attr: AttrId) -> AggregateExpr<S> {
        AggregateExpr::product(vec![UdafFactor::Identity(attr)])
    }
}

/// A group-by aggregate query over the full natural join (implicit body).
#[derive(Debug, Clone)]
pub struct AggregateQuery<S> {
    pub id: String,
    /// Canonically sorted by AttrId.
    pub group_by: Vec<AttrId>,
    pub aggregates: Vec<AggregateExpr<S>>,
}

impl<S: Scalar> AggregateQuery<S> {
    pub fn new(id: &str, mut group_by: Vec<AttrId>, aggregates: Vec<AggregateExpr<S>>) -> Self {
        group_by.sort();
        group_by.dedup();
        AggregateQuery {
            id: id.to_string(),
            group_by,
            aggregates,
        }
    }

    pub fn aggregate_count(&self) -> usize {
        self.aggregates.len()
    }
}

type HostFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
type ParamHostFn<S> = Arc<dyn Fn(&[S], &[S]) -> S + Send + Sync>;

/// Test applied by one conjunction condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOp {
    Cmp(CmpOp),
    In,
    NotIn,
}

/// One ancestor condition of a dynamic conjunction (CART path filters).
/// Set literals are `|`-separated strings or single values.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    /// Index into the function's argument list.
    pub arg: usize,
    pub op: PathOp,
    pub value: Literal,
}

pub enum FnKind<S> {
    /// Static host function over the numeric argument values.
    Host(HostFn<S>),
    /// Host function with a rebindable parameter vector.
    ParamHost { params: Vec<S>, f: ParamHostFn<S> },
    /// Rebindable conjunction of selection conditions over the arguments,
    /// evaluated in key space. An empty conjunction is constantly 1.
    Conjunction(Vec<Condition>),
}

impl<S> std::fmt::Debug for FnKind<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FnKind::Host(_) => write!(f, "Host"),
            FnKind::ParamHost { params, .. } => write!(f, "ParamHost({} params)", params.len()),
            FnKind::Conjunction(c) => write!(f, "Conjunction({} conditions)", c.len()),
        }
    }
}

#[derive(Debug)]
pub struct NamedFn<S> {
    pub name: String,
    pub arity: usize,
    pub kind: FnKind<S>,
}

/// Registry of named UDAFs and dynamic parameters, keyed by string id.
/// Rebinding takes `&mut self`, so it cannot race with execution, which
/// borrows the registry shared.
#[derive(Debug, Default)]
pub struct FunctionRegistry<S> {
    fns: Vec<NamedFn<S>>,
    by_name: HashMap<String, FuncId>,
    dyn_params: Vec<Literal>,
}

impl<S: Scalar> FunctionRegistry<S> {
    pub fn new() -> Self {
        FunctionRegistry {
            fns: Vec::new(),
            by_name: HashMap::new(),
            dyn_params: Vec::new(),
        }
    }

    /// Registers the usual numeric helpers (`exp`, `ln1p`, `sq`, `abs`).
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_host("exp", 1, Arc::new(|args: &[S]| args[0].exp()));
        r.register_host("ln1p", 1, Arc::new(|args: &[S]| args[0].ln_1p()));
        r.register_host("sq", 1, Arc::new(|args: &[S]| args[0] * args[0]));
        r.register_host("abs", 1, Arc::new(|args: &[S]| args[0].abs()));
        r
    }

    pub fn register_host(&mut self, name: &str, arity: usize, f: HostFn<S>) -> FuncId {
        self.insert(name, arity, FnKind::Host(f))
    }

    pub fn register_param_host(
        &mut self,
        name: &str,
        arity: usize,
        params: Vec<S>,
        f: ParamHostFn<S>,
    ) -> FuncId {
        self.insert(name, arity, FnKind::ParamHost { params, f })
    }

    pub fn register_conjunction(&mut self, name: &str, arity: usize) -> FuncId {
        self.insert(name, arity, FnKind::Conjunction(Vec::new()))
    }

    fn insert(&mut self, name: &str, arity: usize, kind: FnKind<S>) -> FuncId {
        let id = FuncId(self.fns.len() as u32);
        self.fns.push(NamedFn {
            name: name.to_string(),
            arity,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<FuncId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: FuncId) -> &NamedFn<S> {
        &self.fns[id.0 as usize]
    }

    /// Allocates a rebindable threshold slot with an initial value.
    pub fn new_dyn_param(&mut self, initial: Literal) -> DynParamId {
        let id = DynParamId(self.dyn_params.len() as u32);
        self.dyn_params.push(initial);
        id
    }

    pub fn dyn_param(&self, id: DynParamId) -> &Literal {
        &self.dyn_params[id.0 as usize]
    }

    /// Rebinds a dynamic Kronecker threshold. Plans referencing the factor
    /// stay valid; the new value takes effect on the next execution.
    pub fn rebind_threshold(
        &mut self,
        factor: &UdafFactor<S>,
        value: Literal,
    ) -> Result<(), QueryError> {
        match factor {
            UdafFactor::Kronecker {
                threshold: Param::Dynamic(id),
                ..
            }
            | UdafFactor::InSet {
                set: Param::Dynamic(id),
                ..
            } => {
                self.dyn_params[id.0 as usize] = value;
                Ok(())
            }
            _ => Err(QueryError::NotDynamic),
        }
    }

    /// Rebinds the parameter vector of a dynamic named function.
    pub fn rebind_params(&mut self, func: FuncId, params: Vec<S>) -> Result<(), QueryError> {
        match &mut self.fns[func.0 as usize].kind {
            FnKind::ParamHost { params: p, .. } => {
                *p = params;
                Ok(())
            }
            _ => Err(QueryError::NotDynamic),
        }
    }

    /// Rebinds the condition list of a dynamic conjunction.
    pub fn rebind_conjunction(
        &mut self,
        func: FuncId,
        conditions: Vec<Condition>,
    ) -> Result<(), QueryError> {
        match &mut self.fns[func.0 as usize].kind {
            FnKind::Conjunction(c) => {
                *c = conditions;
                Ok(())
            }
            _ => Err(QueryError::NotDynamic),
        }
    }
}

/// Attribute-value binding used by semantic evaluation (oracle, tests).
pub trait Binding<S> {
    fn key(&self, attr: AttrId) -> Option<i64>;
    fn value(&self, attr: AttrId) -> Option<S>;
}

/// Resolves a literal to key space for an attribute (column type + dictionary).
pub trait KeyResolver {
    fn literal_key(&self, attr: AttrId, lit: &Literal) -> i64;
    /// Keys of an in-set literal; a `Str` with `|`-separated parts or ints.
    fn set_keys(&self, attr: AttrId, lit: &Literal) -> Vec<i64> {
        match lit {
            Literal::Str(s) => s
                .split('|')
                .map(|p| self.literal_key(attr, &Literal::parse(p)))
                .collect(),
            other => vec![self.literal_key(attr, other)],
        }
    }
}

/// Resolver for databases whose compared columns are plain integers.
pub struct IntResolver;

impl KeyResolver for IntResolver {
    fn literal_key(&self, _attr: AttrId, lit: &Literal) -> i64 {
        match lit {
            Literal::Int(v) => *v,
            Literal::Float(v) => crate::encode_key(*v),
            Literal::Str(_) => -1,
        }
    }
}

/// Evaluates one factor on a tuple binding.
pub fn eval_factor<S: Scalar>(
    f: &UdafFactor<S>,
    binding: &dyn Binding<S>,
    registry: &FunctionRegistry<S>,
    resolver: &dyn KeyResolver,
) -> Result<S, QueryError> {
    let key_of = |attr: AttrId| binding.key(attr).ok_or(QueryError::UnboundAttribute(attr));
    let val_of = |attr: AttrId| {
        binding
            .value(attr)
            .ok_or(QueryError::UnboundAttribute(attr))
    };
    Ok(match f {
        UdafFactor::Constant(c) => *c,
        UdafFactor::Identity(a) => val_of(*a)?,
        UdafFactor::Power(a, e) => val_of(*a)?.powi(*e as i32),
        UdafFactor::Kronecker { attr, op, threshold } => {
            let lit = match threshold {
                Param::Static(l) => l.clone(),
                Param::Dynamic(id) => registry.dyn_param(*id).clone(),
            };
            let t = resolver.literal_key(*attr, &lit);
            if op.test(key_of(*attr)?, t) {
                S::one()
            } else {
                S::zero()
            }
        }
        UdafFactor::InSet { attr, set } => {
            let lit = match set {
                Param::Static(l) => l.clone(),
                Param::Dynamic(id) => registry.dyn_param(*id).clone(),
            };
            let keys = resolver.set_keys(*attr, &lit);
            if keys.contains(&key_of(*attr)?) {
                S::one()
            } else {
                S::zero()
            }
        }
        UdafFactor::Named { func, args } => {
            let def = registry.get(*func);
            match &def.kind {
                FnKind::Host(h) => {
                    let vals: Vec<S> = args
                        .iter()
                        .map(|&a| val_of(a))
                        .collect::<Result<_, _>>()?;
                    h(&vals)
                }
                FnKind::ParamHost { params, f } => {
                    let vals: Vec<S> = args
                        .iter()
                        .map(|&a| val_of(a))
                        .collect::<Result<_, _>>()?;
                    f(params, &vals)
                }
                FnKind::Conjunction(conds) => {
                    for c in conds {
                        let attr = args[c.arg];
                        let key = key_of(attr)?;
                        let pass = match c.op {
                            PathOp::Cmp(op) => op.test(key, resolver.literal_key(attr, &c.value)),
                            PathOp::In => resolver.set_keys(attr, &c.value).contains(&key),
                            PathOp::NotIn => !resolver.set_keys(attr, &c.value).contains(&key),
                        };
                        if !pass {
                            return Ok(S::zero());
                        }
                    }
                    S::one()
                }
            }
        }
    })
}

/// Evaluates a full aggregate expression (sum of products) on one tuple.
pub fn eval_expr<S: Scalar>(
    e: &AggregateExpr<S>,
    binding: &dyn Binding<S>,
    registry: &FunctionRegistry<S>,
    resolver: &dyn KeyResolver,
) -> Result<S, QueryError> {
    let mut total = S::zero();
    for term in &e.terms {
        let mut p = S::one();
        for f in term {
            p *= eval_factor(f, binding, registry, resolver)?;
        }
        total += p;
    }
    Ok(total)
}
