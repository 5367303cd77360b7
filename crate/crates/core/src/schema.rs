//! Categorical factor space and spatial adjacency.
//!
//! A schema lists the poststratification factors with their ordered levels,
//! optionally names one factor as spatial (with an adjacency graph over its
//! nodes), and fixes the dense cell numbering used by every other module.
//!
//! # Text format
//!
//! Line oriented, UTF-8. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! version 1
//! factor <name> ordinal|nominal: <level>, <level>, ...
//! fold <factor>: <level> -> <node level>
//! spatial <factor>: <nodeA>-<nodeB>, <nodeA>-<nodeB>, ...
//! census: <factor> [as <column>], ...
//! ```
//!
//! * `factor` lines define factors in order; the order fixes the row-major
//!   cell numbering (first factor most significant).
//! * `fold` maps a level of the spatial factor onto another level's node.
//!   Spatial nodes are the unfolded levels, in level order.
//! * `spatial` lists undirected edges. Node names may not contain `-` or `,`.
//! * `census` fixes the census CSV column order and optional column aliases.
//!   When absent, columns are the factor names in factor order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const BELARUS_SCHEMA: &str = include_str!("../data/belarus.schema");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    pub ordinal: bool,
}

impl Factor {
    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Adjacency over the nodes of the spatial factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGraph {
    /// Index of the spatial factor in the schema.
    pub factor: usize,
    pub nodes: Vec<String>,
    /// Node of every level of the spatial factor (folded levels share a node).
    pub level_node: Vec<usize>,
    /// Undirected edges with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl SpatialGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Neighbour indices of `node`, ascending.
    pub fn adjacent(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Dense cell id in `[0, P)`, row-major over the schema's factor order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex(pub usize);

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusColumn {
    pub factor: usize,
    pub header: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalSchema {
    pub version: u32,
    pub factors: Vec<Factor>,
    pub spatial: Option<SpatialGraph>,
    pub census_columns: Vec<CensusColumn>,
    strides: Vec<usize>,
}

impl CategoricalSchema {
    /// The bundled five-factor Belarus schema (700 cells).
    pub fn belarus() -> Self {
        Self::parse_str(BELARUS_SCHEMA, "belarus.schema").expect("bundled schema is valid")
    }

    /// Source text of the bundled schema, for writing an editable copy.
    pub fn belarus_source() -> &'static str {
        BELARUS_SCHEMA
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Builds a schema from factors alone (no spatial graph).
    pub fn from_factors(factors: Vec<Factor>) -> Result<Self> {
        let census_columns = factors
            .iter()
            .enumerate()
            .map(|(i, f)| CensusColumn {
                factor: i,
                header: f.name.clone(),
            })
            .collect();
        let mut schema = CategoricalSchema {
            version: 1,
            factors,
            spatial: None,
            census_columns,
            strides: Vec::new(),
        };
        schema.validate()?;
        schema.strides = compute_strides(&schema.factors);
        Ok(schema)
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut version = None;
        let mut factors: Vec<Factor> = Vec::new();
        let mut folds: Vec<(usize, String, String)> = Vec::new();
        let mut spatial_decl: Option<(usize, usize, String)> = None;
        let mut census_decl: Option<(usize, String)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let keyword = keyword.trim_end_matches(':');
            let rest = rest.trim();
            match keyword {
                "version" => {
                    let v = rest
                        .parse::<u32>()
                        .map_err(|_| Error::parse(origin, lineno, format!("bad version `{rest}`")))?;
                    if v != 1 {
                        return Err(Error::parse(origin, lineno, format!("unsupported schema version {v}")));
                    }
                    version = Some(v);
                }
                "factor" => {
                    let (head, levels) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::parse(origin, lineno, "expected `factor <name> <kind>: levels`"))?;
                    let mut head = head.split_whitespace();
                    let name = head
                        .next()
                        .ok_or_else(|| Error::parse(origin, lineno, "missing factor name"))?;
                    let ordinal = match head.next() {
                        Some("ordinal") => true,
                        Some("nominal") => false,
                        other => {
                            return Err(Error::parse(
                                origin,
                                lineno,
                                format!("factor kind must be ordinal or nominal, got {other:?}"),
                            ))
                        }
                    };
                    if head.next().is_some() {
                        return Err(Error::parse(origin, lineno, "trailing tokens in factor header"));
                    }
                    let levels: Vec<String> = split_list(levels);
                    factors.push(Factor {
                        name: name.to_string(),
                        levels,
                        ordinal,
                    });
                }
                "fold" => {
                    let (fname, body) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::parse(origin, lineno, "expected `fold <factor>: <level> -> <node>`"))?;
                    let (from, to) = body
                        .split_once("->")
                        .ok_or_else(|| Error::parse(origin, lineno, "fold needs `->`"))?;
                    folds.push((lineno, fname.trim().to_string(), format!("{}\u{0}{}", from.trim(), to.trim())));
                }
                "spatial" => {
                    if spatial_decl.is_some() {
                        return Err(Error::parse(origin, lineno, "only one spatial factor is supported"));
                    }
                    let (fname, body) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::parse(origin, lineno, "expected `spatial <factor>: edges`"))?;
                    let fidx = factors
                        .iter()
                        .position(|f| f.name == fname.trim())
                        .ok_or_else(|| Error::parse(origin, lineno, format!("unknown factor `{}`", fname.trim())))?;
                    spatial_decl = Some((lineno, fidx, body.to_string()));
                }
                "census" => {
                    census_decl = Some((lineno, rest.to_string()));
                }
                other => {
                    return Err(Error::parse(origin, lineno, format!("unknown directive `{other}`")));
                }
            }
        }

        if version.is_none() {
            return Err(Error::parse(origin, 1, "missing `version` line"));
        }

        let spatial = match spatial_decl {
            None => {
                if let Some((line, _, _)) = folds.first() {
                    return Err(Error::parse(origin, *line, "fold without a spatial declaration"));
                }
                None
            }
            Some((line, fidx, body)) => Some(build_graph(origin, line, &factors, fidx, &folds, &body)?),
        };

        let census_columns = match census_decl {
            None => factors
                .iter()
                .enumerate()
                .map(|(i, f)| CensusColumn {
                    factor: i,
                    header: f.name.clone(),
                })
                .collect(),
            Some((line, body)) => {
                let mut cols = Vec::new();
                for item in split_list(&body) {
                    let (fname, header) = match item.split_once(" as ") {
                        Some((f, h)) => (f.trim().to_string(), h.trim().to_string()),
                        None => (item.clone(), item.clone()),
                    };
                    let fidx = factors
                        .iter()
                        .position(|f| f.name == fname)
                        .ok_or_else(|| Error::parse(origin, line, format!("unknown factor `{fname}` in census")))?;
                    cols.push(CensusColumn { factor: fidx, header });
                }
                let mut seen: Vec<usize> = cols.iter().map(|c| c.factor).collect();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != factors.len() || cols.len() != factors.len() {
                    return Err(Error::parse(origin, line, "census must list every factor exactly once"));
                }
                cols
            }
        };

        let mut schema = CategoricalSchema {
            version: 1,
            factors,
            spatial,
            census_columns,
            strides: Vec::new(),
        };
        schema.validate()?;
        schema.strides = compute_strides(&schema.factors);
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Schema("no factors defined".into()));
        }
        let mut names = BTreeSet::new();
        for f in &self.factors {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Duplicate {
                    kind: "factor",
                    name: f.name.clone(),
                });
            }
            if f.levels.is_empty() {
                return Err(Error::Schema(format!("factor `{}` has no levels", f.name)));
            }
            if f.ordinal && f.levels.len() < 2 {
                return Err(Error::Schema(format!("ordinal factor `{}` needs at least 2 levels", f.name)));
            }
            let mut seen = BTreeSet::new();
            for l in &f.levels {
                if l.is_empty() {
                    return Err(Error::Schema(format!("factor `{}` has an empty level name", f.name)));
                }
                if !seen.insert(l.as_str()) {
                    return Err(Error::Duplicate {
                        kind: "level",
                        name: format!("{}={}", f.name, l),
                    });
                }
            }
        }
        if let Some(g) = &self.spatial {
            if !g.is_connected() {
                let isolated: Vec<&str> = (0..g.len())
                    .filter(|&i| g.degree(i) == 0)
                    .map(|i| g.nodes[i].as_str())
                    .collect();
                let detail = if isolated.is_empty() {
                    "graph has several components".to_string()
                } else {
                    format!("isolated nodes: {}", isolated.join(", "))
                };
                return Err(Error::Disconnected(detail));
            }
        }
        Ok(())
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        self.factors
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Unknown {
                kind: "factor",
                name: name.to_string(),
            })
    }

    /// Total number of levels across factors.
    pub fn total_levels(&self) -> usize {
        self.factors.iter().map(Factor::len).sum()
    }

    /// Number of poststratification cells P.
    pub fn cell_count(&self) -> usize {
        self.factors.iter().map(Factor::len).product()
    }

    pub fn cell_id(&self, levels: &[usize]) -> Result<CellIndex> {
        if levels.len() != self.factors.len() {
            return Err(Error::invalid(format!(
                "cell tuple has {} entries, schema has {} factors",
                levels.len(),
                self.factors.len()
            )));
        }
        let mut id = 0;
        for ((&l, f), &stride) in levels.iter().zip(&self.factors).zip(&self.strides) {
            if l >= f.len() {
                return Err(Error::invalid(format!("level {l} out of range for factor `{}`", f.name)));
            }
            id += l * stride;
        }
        Ok(CellIndex(id))
    }

    pub fn cell_levels(&self, cell: CellIndex) -> Vec<usize> {
        let mut rest = cell.0;
        self.strides
            .iter()
            .zip(&self.factors)
            .map(|(&stride, f)| {
                let l = rest / stride;
                rest %= stride;
                debug_assert!(l < f.len());
                l
            })
            .collect()
    }

    /// Level of factor `factor` in `cell` without allocating the full tuple.
    pub fn cell_level(&self, cell: CellIndex, factor: usize) -> usize {
        (cell.0 / self.strides[factor]) % self.factors[factor].len()
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> {
        (0..self.cell_count()).map(CellIndex)
    }

    /// Spatial node of a cell, when the schema has a spatial factor.
    pub fn spatial_node(&self, cell: CellIndex) -> Option<usize> {
        self.spatial
            .as_ref()
            .map(|g| g.level_node[self.cell_level(cell, g.factor)])
    }

    /// Human-readable label such as `gender=male, region=Brest, ...`.
    pub fn cell_label(&self, cell: CellIndex) -> String {
        self.cell_levels(cell)
            .iter()
            .zip(&self.factors)
            .map(|(&l, f)| format!("{}={}", f.name, f.levels[l]))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// First-degree neighbours of a spatial node and its degree.
    pub fn neighbours(&self, node: &str) -> Result<(Vec<&str>, usize)> {
        let g = self
            .spatial
            .as_ref()
            .ok_or_else(|| Error::Schema("schema has no spatial factor".into()))?;
        let idx = g.node_index(node).ok_or_else(|| Error::Unknown {
            kind: "spatial node",
            name: node.to_string(),
        })?;
        let names: Vec<&str> = g.adjacent(idx).iter().map(|&j| g.nodes[j].as_str()).collect();
        let d = names.len();
        Ok((names, d))
    }
}

fn compute_strides(factors: &[Factor]) -> Vec<usize> {
    let mut strides = vec![1; factors.len()];
    for i in (0..factors.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * factors[i + 1].len();
    }
    strides
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|x| x.trim().to_string())
        .filter(|x| !x.is_empty())
        .collect()
}

fn build_graph(
    origin: &str,
    line: usize,
    factors: &[Factor],
    fidx: usize,
    folds: &[(usize, String, String)],
    body: &str,
) -> Result<SpatialGraph> {
    let factor = &factors[fidx];
    let mut fold_map: HashMap<usize, String> = HashMap::new();
    for (fline, fname, pair) in folds {
        if fname != &factor.name {
            return Err(Error::parse(origin, *fline, format!("fold on non-spatial factor `{fname}`")));
        }
        let (from, to) = pair.split_once('\u{0}').expect("fold pair");
        let li = factor
            .level_index(from)
            .ok_or_else(|| Error::parse(origin, *fline, format!("unknown level `{from}`")))?;
        if factor.level_index(to).is_none() {
            return Err(Error::parse(origin, *fline, format!("unknown level `{to}`")));
        }
        if from == to {
            return Err(Error::parse(origin, *fline, "a level cannot fold onto itself"));
        }
        fold_map.insert(li, to.to_string());
    }
    let nodes: Vec<String> = factor
        .levels
        .iter()
        .enumerate()
        .filter(|(i, _)| !fold_map.contains_key(i))
        .map(|(_, l)| l.clone())
        .collect();
    for n in &nodes {
        if n.contains('-') {
            return Err(Error::parse(origin, line, format!("spatial node `{n}` may not contain `-`")));
        }
    }
    let level_node = factor
        .levels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let target = fold_map.get(&i).unwrap_or(l);
            nodes
                .iter()
                .position(|n| n == target)
                .ok_or_else(|| Error::parse(origin, line, format!("fold target `{target}` is itself folded")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut edges = BTreeSet::new();
    for item in split_list(body) {
        let (a, b) = item
            .split_once('-')
            .ok_or_else(|| Error::parse(origin, line, format!("edge `{item}` must be `A-B`")))?;
        let (a, b) = (a.trim(), b.trim());
        let ai = nodes
            .iter()
            .position(|n| n == a)
            .ok_or_else(|| Error::parse(origin, line, format!("unknown spatial node `{a}`")))?;
        let bi = nodes
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| Error::parse(origin, line, format!("unknown spatial node `{b}`")))?;
        if ai == bi {
            return Err(Error::parse(origin, line, format!("self-loop on `{a}`")));
        }
        if !edges.insert((ai.min(bi), ai.max(bi))) {
            return Err(Error::parse(origin, line, format!("duplicate edge `{item}`")));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    Ok(SpatialGraph {
        factor: fidx,
        nodes,
        level_node,
        edges,
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schema_shape() {
        let s = CategoricalSchema::belarus();
        assert_eq!(s.factors.len(), 5);
        assert_eq!(s.total_levels(), 21);
        assert_eq!(s.cell_count(), 700);
        let g = s.spatial.as_ref().unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.is_connected());
        assert!(g.edges.iter().all(|&(a, b)| a != b));
        assert!(s.factors.iter().filter(|f| f.ordinal).all(|f| f.len() >= 2));
    }

    #[test]
    fn hrodna_neighbours() {
        let s = CategoricalSchema::belarus();
        let (mut n, d) = s.neighbours("Hrodna").unwrap();
        n.sort();
        assert_eq!(n, vec!["Brest", "Minsk", "Vitsebsk"]);
        assert_eq!(d, 3);
    }

    #[test]
    fn minsk_degree_matches_audited_map() {
        // Minsk region borders all five other oblasts.
        let s = CategoricalSchema::belarus();
        let (_, d) = s.neighbours("Minsk").unwrap();
        assert_eq!(d, 5);
        for node in ["Brest", "Vitsebsk", "Homel", "Mahiliou", "Hrodna"] {
            assert_eq!(s.neighbours(node).unwrap().1, 3, "{node}");
        }
    }

    #[test]
    fn degrees_are_positive_and_sum_to_twice_edges() {
        let s = CategoricalSchema::belarus();
        let g = s.spatial.as_ref().unwrap();
        let total: usize = (0..g.len()).map(|i| g.degree(i)).sum();
        assert_eq!(total, 2 * g.edges.len());
        assert!((0..g.len()).all(|i| g.degree(i) >= 1));
        for i in 0..g.len() {
            for &j in g.adjacent(i) {
                assert!(g.adjacent(j).contains(&i));
            }
        }
    }

    #[test]
    fn minsk_city_folds_into_minsk_region() {
        let s = CategoricalSchema::belarus();
        let g = s.spatial.as_ref().unwrap();
        let region = s.factor("region").unwrap();
        let city = region.level_index("Minsk city").unwrap();
        let minsk = region.level_index("Minsk").unwrap();
        assert_eq!(g.level_node[city], g.level_node[minsk]);
        assert_eq!(g.nodes[g.level_node[city]], "Minsk");
    }

    #[test]
    fn unknown_node_is_error() {
        let s = CategoricalSchema::belarus();
        assert!(matches!(s.neighbours("Minsk city"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn single_level_schema() {
        let s = CategoricalSchema::parse_str("version 1\nfactor only nominal: one\n", "t").unwrap();
        assert_eq!(s.cell_count(), 1);
        assert_eq!(s.total_levels(), 1);
    }

    #[test]
    fn isolated_node_is_disconnected() {
        let text = "version 1\nfactor r nominal: A, B, C\nspatial r: A-B\n";
        let err = CategoricalSchema::parse_str(text, "t").unwrap_err();
        assert!(matches!(err, Error::Disconnected(_)));
        assert!(err.to_string().contains("disconnected"));
    }

    #[test]
    fn duplicate_levels_rejected() {
        let text = "version 1\nfactor r nominal: A, B, A\n";
        assert!(matches!(
            CategoricalSchema::parse_str(text, "t"),
            Err(Error::Duplicate { kind: "level", .. })
        ));
    }

    #[test]
    fn self_loop_rejected() {
        let text = "version 1\nfactor r nominal: A, B\nspatial r: A-B, A-A\n";
        assert!(matches!(CategoricalSchema::parse_str(text, "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn census_columns_follow_declaration() {
        let s = CategoricalSchema::belarus();
        let headers: Vec<&str> = s.census_columns.iter().map(|c| c.header.as_str()).collect();
        assert_eq!(headers, ["region", "location_type", "gender", "age", "education"]);
    }

    proptest! {
        #[test]
        fn cell_index_round_trip(id in 0usize..700) {
            let s = CategoricalSchema::belarus();
            let levels = s.cell_levels(CellIndex(id));
            prop_assert_eq!(s.cell_id(&levels).unwrap(), CellIndex(id));
            for (f, &l) in levels.iter().enumerate() {
                prop_assert_eq!(s.cell_level(CellIndex(id), f), l);
            }
        }
    }
}
