//! aggforge: optimize and execute batches of group-by aggregates over
//! acyclic joins, plus the application drivers built on top (covar matrices,
//! ridge regression, data cubes, mutual information, Chow-Liu and CART).

use aggforge_core::apps::covar::{covar_batch, linreg, BgdConfig, CovarEntry, CovarMatrix, Feature};
use aggforge_core::apps::cube::{data_cube_batch, render_1nf};
use aggforge_core::apps::mi::{chow_liu, mi_matrix, mutual_information_batch};
use aggforge_core::apps::tree::{cart_train, render_tree, CartConfig, CostKind};
use aggforge_core::catalog::{
    infer_join_tree, parse_config, validate_join_tree, AttrId, AttrKind, Catalog, JoinTree,
};
use aggforge_core::exec::{prepare_batch, PreparedBatch, ResultTable, ScanStats};
use aggforge_core::query::parse_batch;
use aggforge_core::storage::{CsvOptions, Database};
use aggforge_core::testkit::{generate_db, write_db_csvs, DbPattern, RandomDbSpec};
use aggforge_core::{FunctionRegistry, Real};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "aggforge",
    version,
    about = "multi-query aggregate engine over acyclic joins"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Schema + join tree config file.
    #[arg(long)]
    schema: PathBuf,
    /// Directory with one <relation>.csv per relation.
    #[arg(long)]
    data: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Print the consolidated view list and group graph.
    #[arg(long)]
    explain_logical: bool,
    /// Print the per-group multi-output plans.
    #[arg(long)]
    explain_physical: bool,
    /// Write per-group scan statistics next to the results.
    #[arg(long)]
    stats: bool,
    /// Output directory for result artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed recorded in the summary (runs themselves are deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// CSV files carry a header row.
    #[arg(long)]
    header: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a query batch from a DSL file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Query batch file (one query per line).
        #[arg(long)]
        queries: PathBuf,
    },
    /// Covar matrix over all attributes (or a chosen feature list).
    Covar {
        #[command(flatten)]
        common: Common,
        /// Comma-separated feature attributes (default: all non-join).
        #[arg(long)]
        features: Option<String>,
        /// Label attribute (default: last feature).
        #[arg(long)]
        label: Option<String>,
    },
    /// Ridge linear regression via BGD over the covar matrix.
    Linreg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: String,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
    },
    /// Data cube over dimension attributes with SUM measures.
    Cube {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dims: String,
        #[arg(long)]
        measures: String,
    },
    /// Pairwise mutual information.
    Mi {
        #[command(flatten)]
        common: Common,
        /// Attributes (default: all categorical).
        #[arg(long)]
        attrs: Option<String>,
    },
    /// Chow-Liu tree (maximum-total-MI spanning tree).
    Chowliu {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        attrs: Option<String>,
    },
    /// Regression tree (variance cost).
    Rtree {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        label: String,
        #[arg(long)]
        features: Option<String>,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        min_split: usize,
        #[arg(long, default_value_t = 20)]
        buckets: usize,
    },
    /// Classification tree (gini or entropy cost).
    Ctree {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        label: String,
        #[arg(long)]
        features: Option<String>,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        min_split: usize,
        #[arg(long, default_value_t = 20)]
        buckets: usize,
        #[arg(long, default_value = "gini")]
        cost: String,
    },
    /// Generate a random acyclic database (schema.cfg + CSVs).
    Gen {
        /// key=value spec: relations, rows, attrs, cat, pattern, domain.
        #[arg(
            long,
            default_value = "relations=3,rows=200,attrs=2,cat=0.4,pattern=star,domain=20"
        )]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Config errors exit 2, execution errors exit 1.
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Failure {
        Failure::Config(e.to_string())
    }
    fn run(e: impl std::fmt::Display) -> Failure {
        Failure::Run(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

struct Session {
    catalog: Catalog,
    tree: JoinTree,
    db: Database<Real>,
    registry: FunctionRegistry,
    common: Common,
}

fn load_session(common: &Common) -> Result<Session, Failure> {
    let text = std::fs::read_to_string(&common.schema).map_err(|e| {
        Failure::Config(format!(
            "cannot read schema `{}`: {e}",
            common.schema.display()
        ))
    })?;
    let (catalog, explicit) = parse_config(&text).map_err(Failure::config)?;
    let tree = match explicit {
        Some(t) => validate_join_tree(&catalog, &t).map_err(Failure::config)?,
        None => infer_join_tree(&catalog).map_err(Failure::config)?,
    };
    let mut db: Database<Real> = Database::new();
    let options = CsvOptions {
        delimiter: common.delimiter,
        has_header: common.header,
    };
    for rel in 0..catalog.relations().len() {
        let rel = aggforge_core::catalog::RelId(rel as u32);
        let path = common.data.join(format!("{}.csv", catalog.rel_name(rel)));
        db.load_csv(&catalog, rel, &path, options)
            .map_err(Failure::config)?;
    }
    Ok(Session {
        catalog,
        tree,
        db,
        registry: FunctionRegistry::with_builtins(),
        common: common.clone(),
    })
}

impl Session {
    fn attr(&self, name: &str) -> Result<AttrId, Failure> {
        self.catalog.attr(name.trim()).map_err(Failure::config)
    }

    fn attr_list(&self, spec: &str) -> Result<Vec<AttrId>, Failure> {
        spec.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.attr(s))
            .collect()
    }

    /// Attributes appearing in exactly one relation (non-join), in id order.
    fn non_join_attrs(&self) -> Vec<AttrId> {
        self.catalog
            .attr_ids()
            .filter(|&a| {
                self.catalog
                    .relations()
                    .iter()
                    .filter(|r| r.attrs.contains(&a))
                    .count()
                    == 1
            })
            .collect()
    }

    fn display_key(&self, attr: AttrId, key: i64) -> String {
        aggforge_core::apps::cube::display_key(&self.db, &self.catalog, attr, key)
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        std::fs::create_dir_all(&self.common.out)
            .map_err(|e| Failure::run(format!("cannot create output dir: {e}")))?;
        Ok(&self.common.out)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        let path = self.out_dir()?.join(name);
        std::fs::write(&path, text)
            .map_err(|e| Failure::run(format!("cannot write `{}`: {e}", path.display())))
    }

    /// Runs a prepared batch, prints explains, writes stats and the summary,
    /// returns the query tables.
    fn execute(
        &self,
        prepared: &PreparedBatch<Real>,
        app_aggregates: usize,
    ) -> Result<Vec<Arc<ResultTable<Real>>>, Failure> {
        if self.common.explain_logical {
            print!(
                "{}",
                aggforge_core::logical::explain_logical(
                    &prepared.opt,
                    &prepared.batch,
                    &self.catalog
                )
            );
        }
        if self.common.explain_physical {
            for plan in &prepared.plans {
                print!(
                    "{}",
                    aggforge_core::physical::explain_plan(
                        plan,
                        &prepared.opt,
                        &prepared.batch,
                        &self.catalog
                    )
                );
            }
        }
        let (tables, stats) = prepared
            .execute(&self.catalog, &self.db, &self.registry, self.common.threads)
            .map_err(Failure::run)?;
        self.write_summary(prepared, app_aggregates, &tables)?;
        if self.common.stats {
            self.write_stats(&stats)?;
        }
        Ok(tables)
    }

    fn write_summary(
        &self,
        prepared: &PreparedBatch<Real>,
        app_aggregates: usize,
        tables: &[Arc<ResultTable<Real>>],
    ) -> Result<(), Failure> {
        let intermediates: usize = prepared.plans.iter().map(|p| p.intermediate_count()).sum();
        let output_rows: usize = tables.iter().map(|t| t.rows()).sum();
        let text = format!(
            "application_aggregates,intermediate_aggregates,views,groups,output_rows,queries,threads,seed\n{},{},{},{},{},{},{},{}\n",
            app_aggregates,
            intermediates,
            prepared.opt.merged_view_count(),
            prepared.opt.graph.groups.len(),
            output_rows,
            prepared.batch.len(),
            self.common.threads,
            self.common.seed,
        );
        self.write("summary.csv", &text)
    }

    fn write_stats(&self, stats: &[ScanStats]) -> Result<(), Failure> {
        let mut text =
            String::from("group,node,leaf_visits,view_lookups,inner_iters,output_rows\n");
        for s in stats {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.group, s.node, s.leaf_visits, s.view_lookups, s.inner_iters, s.output_rows
            ));
        }
        self.write("stats.csv", &text)
    }

    fn write_result_csvs(
        &self,
        prepared: &PreparedBatch<Real>,
        tables: &[Arc<ResultTable<Real>>],
    ) -> Result<(), Failure> {
        for (qi, q) in prepared.batch.iter().enumerate() {
            let rt = &tables[qi];
            let mut text = String::new();
            let mut header: Vec<String> = rt
                .key_attrs
                .iter()
                .map(|&a| self.catalog.attr_name(a).to_string())
                .collect();
            for i in 0..rt.arity {
                header.push(format!("agg{i}"));
            }
            text.push_str(&header.join(","));
            text.push('\n');
            let rows = if rt.key_attrs.is_empty() { 1 } else { rt.rows() };
            for row in 0..rows {
                let mut cells: Vec<String> = rt
                    .key_attrs
                    .iter()
                    .enumerate()
                    .map(|(c, &a)| self.display_key(a, rt.key(row, c)))
                    .collect();
                for agg in 0..rt.arity {
                    let v = if rt.values.is_empty() {
                        0.0
                    } else {
                        rt.value(row, agg)
                    };
                    cells.push(format!("{v}"));
                }
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            self.write(&format!("{}.csv", q.id), &text)?;
        }
        Ok(())
    }
}

fn run_mi(s: &Session, attrs: &Option<String>, want_tree: bool) -> Result<(), Failure> {
    let attrs: Vec<AttrId> = match attrs {
        Some(a) => s.attr_list(a)?,
        None => s
            .catalog
            .attr_ids()
            .filter(|&a| s.catalog.attr_info(a).kind == AttrKind::Categorical)
            .collect(),
    };
    if attrs.len() < 2 {
        return Err(Failure::Config("need at least two attributes".into()));
    }
    let batch = mutual_information_batch::<Real>(&attrs);
    let app_aggs = batch.queries.len();
    let prepared = prepare_batch(batch.queries.clone(), &s.catalog, &s.tree, &s.db, None)
        .map_err(Failure::run)?;
    let tables = s.execute(&prepared, app_aggs)?;
    let mi = mi_matrix(&batch, &tables).map_err(Failure::run)?;
    let mut text = String::from("a,b,mi\n");
    for i in 0..attrs.len() {
        for j in i + 1..attrs.len() {
            text.push_str(&format!(
                "{},{},{}\n",
                s.catalog.attr_name(attrs[i]),
                s.catalog.attr_name(attrs[j]),
                mi.get(i, j)
            ));
        }
    }
    s.write("mi.csv", &text)?;
    if want_tree {
        let edges = chow_liu(&mi);
        let mut text = String::from("a,b\n");
        for (i, j) in edges {
            text.push_str(&format!(
                "{},{}\n",
                s.catalog.attr_name(attrs[i]),
                s.catalog.attr_name(attrs[j])
            ));
        }
        s.write("chowliu.txt", &text)?;
    }
    Ok(())
}

fn run_cart(
    common: Common,
    label: String,
    features: Option<String>,
    max_depth: usize,
    min_split: usize,
    buckets: usize,
    cost: CostKind,
) -> Result<(), Failure> {
    let mut s = load_session(&common)?;
    let label = s.attr(&label)?;
    let feats: Vec<AttrId> = match &features {
        Some(f) => s.attr_list(f)?,
        None => s
            .non_join_attrs()
            .into_iter()
            .filter(|&a| a != label)
            .collect(),
    };
    if feats.is_empty() {
        return Err(Failure::Config("no feature attributes".into()));
    }
    let cfg = CartConfig {
        label,
        features: feats,
        max_depth,
        min_split,
        buckets,
        cost,
        threads: s.common.threads,
    };
    let t = cart_train(&s.catalog, &s.tree, &s.db, &mut s.registry, &cfg).map_err(Failure::run)?;
    let text = render_tree(&t, &s.catalog, &s.db);
    print!("{text}");
    s.write("tree.txt", &text)
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { common, queries } => {
            let s = load_session(&common)?;
            let text = std::fs::read_to_string(&queries).map_err(|e| {
                Failure::Config(format!("cannot read queries `{}`: {e}", queries.display()))
            })?;
            let batch = parse_batch(&text, &s.catalog, &s.registry).map_err(Failure::config)?;
            let app_aggs: usize = batch.iter().map(|q| q.aggregates.len()).sum();
            let prepared =
                prepare_batch(batch, &s.catalog, &s.tree, &s.db, None).map_err(Failure::run)?;
            let tables = s.execute(&prepared, app_aggs)?;
            s.write_result_csvs(&prepared, &tables)
        }
        Command::Covar {
            common,
            features,
            label,
        } => {
            let s = load_session(&common)?;
            let attrs: Vec<AttrId> = match &features {
                Some(f) => s.attr_list(f)?,
                None => s.non_join_attrs(),
            };
            if attrs.is_empty() {
                return Err(Failure::Config("no feature attributes".into()));
            }
            let label_attr = match &label {
                Some(l) => s.attr(l)?,
                None => *attrs.last().unwrap(),
            };
            let mut items: Vec<Feature> = vec![Feature::Intercept];
            items.extend(
                attrs
                    .iter()
                    .filter(|&&a| a != label_attr)
                    .map(|&a| Feature::Attr(a)),
            );
            let batch = covar_batch::<Real>(&s.catalog, &items, Feature::Attr(label_attr));
            let app_aggs = batch.aggregate_value_count();
            let prepared = prepare_batch(batch.queries.clone(), &s.catalog, &s.tree, &s.db, None)
                .map_err(Failure::run)?;
            let tables = s.execute(&prepared, app_aggs)?;
            let matrix = CovarMatrix::assemble(&batch, &tables);
            let mut text = String::from("j,k,keys,value\n");
            let item_name = |f: &Feature| match f {
                Feature::Intercept => "1".to_string(),
                Feature::Attr(a) => s.catalog.attr_name(*a).to_string(),
            };
            for &(j, k) in &batch.pairs {
                match matrix.get(j, k) {
                    CovarEntry::Scalar(v) => {
                        text.push_str(&format!(
                            "{},{},,{v}\n",
                            item_name(&batch.items[j]),
                            item_name(&batch.items[k])
                        ));
                    }
                    CovarEntry::Table(rt) => {
                        for row in 0..rt.rows() {
                            let keys: Vec<String> = rt
                                .key_attrs
                                .iter()
                                .enumerate()
                                .map(|(c, &a)| s.display_key(a, rt.key(row, c)))
                                .collect();
                            text.push_str(&format!(
                                "{},{},{},{}\n",
                                item_name(&batch.items[j]),
                                item_name(&batch.items[k]),
                                keys.join("|"),
                                rt.value(row, 0)
                            ));
                        }
                    }
                }
            }
            s.write("covar.csv", &text)
        }
        Command::Linreg {
            common,
            features,
            label,
            lambda,
        } => {
            let s = load_session(&common)?;
            let feats = s.attr_list(&features)?;
            let label = s.attr(&label)?;
            let cfg = BgdConfig {
                lambda,
                ..Default::default()
            };
            let (res, _) = linreg(
                &s.catalog,
                &s.tree,
                &s.db,
                &s.registry,
                &feats,
                label,
                &cfg,
                s.common.threads,
            )
            .map_err(Failure::run)?;
            let mut text = String::from("term,theta\n");
            text.push_str(&format!("intercept,{}\n", res.params.theta[0]));
            for (i, &a) in feats.iter().enumerate() {
                text.push_str(&format!(
                    "{},{}\n",
                    s.catalog.attr_name(a),
                    res.params.theta[i + 1]
                ));
            }
            s.write("model.txt", &text)?;
            let trace: Vec<String> = res.objective_trace.iter().map(|j| j.to_string()).collect();
            s.write("trace.csv", &format!("objective\n{}\n", trace.join("\n")))?;
            println!(
                "converged={} iterations={} final_objective={}",
                res.params.converged,
                res.params.iterations,
                res.objective_trace.last().unwrap()
            );
            Ok(())
        }
        Command::Cube {
            common,
            dims,
            measures,
        } => {
            let s = load_session(&common)?;
            let dims = s.attr_list(&dims)?;
            let measures = s.attr_list(&measures)?;
            let batch = data_cube_batch::<Real>(&dims, &measures);
            let app_aggs = batch.aggregate_value_count();
            let prepared = prepare_batch(batch.queries.clone(), &s.catalog, &s.tree, &s.db, None)
                .map_err(Failure::run)?;
            let tables = s.execute(&prepared, app_aggs)?;
            s.write("cube.csv", &render_1nf(&batch, &tables, &s.catalog, &s.db))
        }
        Command::Mi { common, attrs } => {
            let s = load_session(&common)?;
            run_mi(&s, &attrs, false)
        }
        Command::Chowliu { common, attrs } => {
            let s = load_session(&common)?;
            run_mi(&s, &attrs, true)
        }
        Command::Rtree {
            common,
            label,
            features,
            max_depth,
            min_split,
            buckets,
        } => run_cart(
            common,
            label,
            features,
            max_depth,
            min_split,
            buckets,
            CostKind::Variance,
        ),
        Command::Ctree {
            common,
            label,
            features,
            max_depth,
            min_split,
            buckets,
            cost,
        } => {
            let cost = match cost.as_str() {
                "gini" => CostKind::Gini,
                "entropy" => CostKind::Entropy,
                other => return Err(Failure::Config(format!("unknown cost `{other}`"))),
            };
            run_cart(common, label, features, max_depth, min_split, buckets, cost)
        }
        Command::Gen { spec, seed, out } => {
            let mut rspec = RandomDbSpec {
                seed,
                ..Default::default()
            };
            for kv in spec.split(',') {
                let Some((k, v)) = kv.split_once('=') else {
                    return Err(Failure::Config(format!("bad spec entry `{kv}`")));
                };
                match k.trim() {
                    "relations" => rspec.relations = parse_num(v)?,
                    "rows" => rspec.fact_rows = parse_num(v)?,
                    "attrs" => rspec.extra_attrs = parse_num(v)?,
                    "domain" => rspec.key_domain = parse_num(v)?,
                    "cat" => {
                        rspec.categorical_fraction = v
                            .trim()
                            .parse()
                            .map_err(|_| Failure::Config(format!("bad fraction `{v}`")))?
                    }
                    "pattern" => {
                        rspec.pattern = match v.trim() {
                            "star" => DbPattern::Star,
                            "chain" => DbPattern::Chain,
                            "tree" => DbPattern::Tree,
                            other => {
                                return Err(Failure::Config(format!("unknown pattern `{other}`")))
                            }
                        }
                    }
                    other => return Err(Failure::Config(format!("unknown spec key `{other}`"))),
                }
            }
            let g = generate_db::<Real>(&rspec);
            write_db_csvs(&g.catalog, &g.tree, &g.db, &out)
                .map_err(|e| Failure::run(format!("cannot write dataset: {e}")))?;
            println!(
                "wrote {} relations to {}",
                g.catalog.relations().len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, Failure> {
    v.trim()
        .parse()
        .map_err(|_| Failure::Config(format!("bad number `{v}`")))
}
