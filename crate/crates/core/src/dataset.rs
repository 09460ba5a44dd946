//! Dataset loaders, ground-truth communities and a planted-partition generator.
//!
//! Text formats:
//!
//! - edge list: one edge per line, `u<TAB>v` or whitespace separated; `#` starts a comment.
//!   A line `u u` registers node `u` without adding an edge.
//! - community file (SNAP): one community per line, whitespace-separated node ids.
//! - class-label file (`*.labels`): `node<TAB>label`; one community per distinct label.
//! - sparse attributes (`*.attrs`): header `# dim=<d>`, then `node<TAB>i j k` (set bits).
//! - dense attributes (`*.feat`): `node b1 b2 ... bd` with bits in {0,1}.
//! - ego networks: `<ego>.edges`, `<ego>.circles`, `<ego>.feat`, `<ego>.egofeat`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Attributes, Graph, NodeId};

/// Ground-truth communities over the nodes of one graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommunitySet {
    communities: Vec<Vec<NodeId>>,
    membership: Vec<Vec<usize>>,
}

impl CommunitySet {
    /// Empty communities are dropped; members are sorted and deduplicated.
    pub fn new(node_count: usize, communities: Vec<Vec<NodeId>>) -> Result<Self> {
        let mut cleaned = Vec::with_capacity(communities.len());
        for mut c in communities {
            c.sort_unstable();
            c.dedup();
            if let Some(&v) = c.last() {
                if v >= node_count {
                    return Err(Error::Input(format!(
                        "community member {v} outside a graph of {node_count} nodes"
                    )));
                }
            }
            if !c.is_empty() {
                cleaned.push(c);
            }
        }
        let mut membership = vec![Vec::new(); node_count];
        for (i, c) in cleaned.iter().enumerate() {
            for &v in c {
                membership[v].push(i);
            }
        }
        Ok(Self {
            communities: cleaned,
            membership,
        })
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    pub fn community(&self, i: usize) -> &[NodeId] {
        &self.communities[i]
    }

    pub fn communities(&self) -> &[Vec<NodeId>] {
        &self.communities
    }

    /// Indices of the communities containing `v`.
    pub fn membership(&self, v: NodeId) -> &[usize] {
        &self.membership[v]
    }

    /// Union of all communities containing `v` (including `v` when it has any).
    pub fn union_of(&self, v: NodeId) -> BTreeSet<NodeId> {
        self.membership[v]
            .iter()
            .flat_map(|&c| self.communities[c].iter().copied())
            .collect()
    }
}

/// A graph together with its ground-truth communities.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub communities: CommunitySet,
}

impl DatasetBundle {
    pub fn new(name: impl Into<String>, graph: Graph, communities: CommunitySet) -> Result<Self> {
        if communities.node_count() != graph.node_count() {
            return Err(Error::Input(format!(
                "communities cover {} nodes but the graph has {}",
                communities.node_count(),
                graph.node_count()
            )));
        }
        Ok(Self {
            name: name.into(),
            graph,
            communities,
        })
    }

    /// Writes `<name>.edges` and `<name>.cmty` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_edge_list(&self.graph, &dir.join(format!("{}.edges", self.name)))?;
        write_communities(
            &self.communities,
            &self.graph,
            &dir.join(format!("{}.cmty", self.name)),
        )
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_id(path: &Path, line: usize, token: &str) -> Result<u64> {
    token
        .parse::<u64>()
        .map_err(|_| parse_err(path, line, format!("invalid node id {token:?}")))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then_some((i + 1, l))
    })
}

/// Maps original ids onto `[0, n)` in ascending id order.
fn compact(ids: impl IntoIterator<Item = u64>) -> (Vec<u64>, HashMap<u64, NodeId>) {
    let sorted: Vec<u64> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let lookup = sorted.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    (sorted, lookup)
}

/// Original-id → node lookup for a loaded graph (identity when the graph carries no labels).
pub fn id_lookup(graph: &Graph) -> HashMap<u64, NodeId> {
    (0..graph.node_count()).map(|v| (graph.label_of(v), v)).collect()
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(u64, u64)>> {
    data_lines(text)
        .map(|(line, l)| {
            let mut tokens = l.split_whitespace();
            match (tokens.next(), tokens.next()) {
                (Some(a), Some(b)) => Ok((parse_id(path, line, a)?, parse_id(path, line, b)?)),
                _ => Err(parse_err(path, line, "expected two node ids")),
            }
        })
        .collect()
}

fn graph_from_pairs(pairs: &[(u64, u64)], extra_nodes: &[u64]) -> Result<Graph> {
    let (labels, lookup) = compact(
        pairs
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .chain(extra_nodes.iter().copied()),
    );
    Graph::build(
        labels.len(),
        pairs.iter().map(|(a, b)| (lookup[a], lookup[b])),
        None,
    )?
    .with_node_labels(labels)
}

/// Loads an edge list; node ids are compacted to `[0, n)` and the originals kept as node labels.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let pairs = parse_edges(path, &read(path)?)?;
    graph_from_pairs(&pairs, &[])
}

pub fn write_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in 0..graph.node_count() {
        if graph.degree(v) == 0 {
            let id = graph.label_of(v);
            out.push_str(&format!("{id}\t{id}\n"));
        }
    }
    for (u, v) in graph.edges() {
        out.push_str(&format!("{}\t{}\n", graph.label_of(u), graph.label_of(v)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommunityFormat {
    /// One community per line.
    Snap,
    /// `node label` per line; one community per label.
    ClassLabels,
}

impl CommunityFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("labels" | "label") => CommunityFormat::ClassLabels,
            _ => CommunityFormat::Snap,
        }
    }
}

/// Loads communities, choosing the format from the file extension (`.labels` → class labels).
pub fn load_communities(path: impl AsRef<Path>, graph: &Graph) -> Result<CommunitySet> {
    let path = path.as_ref();
    load_communities_as(path, graph, CommunityFormat::from_path(path))
}

pub fn load_communities_as(
    path: impl AsRef<Path>,
    graph: &Graph,
    format: CommunityFormat,
) -> Result<CommunitySet> {
    let path = path.as_ref();
    let text = read(path)?;
    let lookup = id_lookup(graph);
    let resolve = |line: usize, token: &str| -> Result<NodeId> {
        let id = parse_id(path, line, token)?;
        lookup
            .get(&id)
            .copied()
            .ok_or_else(|| parse_err(path, line, format!("node {id} is not in the graph")))
    };
    let communities = match format {
        CommunityFormat::Snap => data_lines(&text)
            .map(|(line, l)| {
                l.split_whitespace()
                    .map(|t| resolve(line, t))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        CommunityFormat::ClassLabels => {
            let mut classes: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
            for (line, l) in data_lines(&text) {
                let mut tokens = l.split_whitespace();
                let (Some(node), Some(label)) = (tokens.next(), tokens.next()) else {
                    return Err(parse_err(path, line, "expected `node label`"));
                };
                classes
                    .entry(label.to_string())
                    .or_default()
                    .push(resolve(line, node)?);
            }
            classes.into_values().collect()
        }
    };
    CommunitySet::new(graph.node_count(), communities)
}

pub fn write_communities(set: &CommunitySet, graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for c in set.communities() {
        let line: Vec<String> = c.iter().map(|&v| graph.label_of(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads node attributes for `graph`, sparse (`.attrs`) or dense (`.feat`) by extension.
/// Nodes absent from the file get an all-zero row.
pub fn load_attributes(path: impl AsRef<Path>, graph: &Graph) -> Result<Attributes> {
    let path = path.as_ref();
    let text = read(path)?;
    let lookup = id_lookup(graph);
    let mut rows = vec![Vec::new(); graph.node_count()];
    let sparse = path.extension().and_then(|e| e.to_str()) == Some("attrs");
    let mut dim = None;
    if sparse {
        dim = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("# dim="))
            .map(|d| d.trim().parse::<usize>())
            .transpose()
            .map_err(|_| parse_err(path, 1, "invalid `# dim=` header"))?;
        if dim.is_none() {
            return Err(parse_err(path, 1, "missing `# dim=` header"));
        }
    }
    for (line, l) in data_lines(&text) {
        let mut tokens = l.split_whitespace();
        let id = parse_id(path, line, tokens.next().unwrap_or_default())?;
        let Some(&v) = lookup.get(&id) else {
            continue;
        };
        let mut set = Vec::new();
        if sparse {
            for t in tokens {
                set.push(
                    t.parse::<u32>()
                        .map_err(|_| parse_err(path, line, format!("invalid index {t:?}")))?,
                );
            }
        } else {
            let bits: Vec<&str> = tokens.collect();
            match dim {
                None => dim = Some(bits.len()),
                Some(d) if d != bits.len() => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("{} attributes, expected {d}", bits.len()),
                    ))
                }
                _ => {}
            }
            for (i, b) in bits.iter().enumerate() {
                match *b {
                    "0" => {}
                    "1" => set.push(i as u32),
                    other => {
                        return Err(parse_err(path, line, format!("attribute {other:?} is not 0/1")))
                    }
                }
            }
        }
        rows[v] = set;
    }
    Attributes::new(dim.unwrap_or(0), rows)
}

/// Loads a citation dataset laid out as `<dir>/<name>.edges`, `<name>.labels` and
/// (optionally) `<name>.attrs`.
pub fn load_citation(dir: impl AsRef<Path>, name: &str) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let graph = load_edge_list(dir.join(format!("{name}.edges")))?;
    let attrs_path = dir.join(format!("{name}.attrs"));
    let graph = if attrs_path.exists() {
        let attrs = load_attributes(&attrs_path, &graph)?;
        graph.with_attributes(Some(attrs))?
    } else {
        graph
    };
    let communities = load_communities(dir.join(format!("{name}.labels")), &graph)?;
    DatasetBundle::new(name, graph, communities)
}

/// Loads every ego network found in `dir`. The ego node is added and linked to all alters.
pub fn load_ego_networks(dir: impl AsRef<Path>) -> Result<Vec<DatasetBundle>> {
    let dir = dir.as_ref();
    let mut stems: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("edges") {
            if let Some(ego) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
            {
                stems.insert(ego, path);
            }
        }
    }
    stems
        .into_iter()
        .map(|(ego, edges_path)| load_ego(dir, ego, &edges_path))
        .collect()
}

fn load_ego(dir: &Path, ego: u64, edges_path: &Path) -> Result<DatasetBundle> {
    let circles_path = dir.join(format!("{ego}.circles"));
    if !circles_path.exists() {
        return Err(Error::Input(format!(
            "ego network {ego} has no circles file {}",
            circles_path.display()
        )));
    }
    let mut pairs = parse_edges(edges_path, &read(edges_path)?)?;
    let feat_path = dir.join(format!("{ego}.feat"));
    let mut feat_rows: Vec<(u64, Vec<u8>)> = Vec::new();
    if feat_path.exists() {
        let text = read(&feat_path)?;
        for (line, l) in data_lines(&text) {
            let mut tokens = l.split_whitespace();
            let id = parse_id(&feat_path, line, tokens.next().unwrap_or_default())?;
            let bits = tokens
                .map(|t| match t {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(parse_err(&feat_path, line, format!("attribute {t:?} is not 0/1"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            feat_rows.push((id, bits));
        }
    }
    let alters: BTreeSet<u64> = pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .chain(feat_rows.iter().map(|(id, _)| *id))
        .filter(|&id| id != ego)
        .collect();
    pairs.extend(alters.iter().map(|&a| (ego, a)));
    let mut extra: Vec<u64> = alters.iter().copied().collect();
    extra.push(ego);
    let graph = graph_from_pairs(&pairs, &extra)?;

    let graph = if feat_rows.is_empty() {
        graph
    } else {
        let dim = feat_rows[0].1.len();
        let lookup = id_lookup(&graph);
        let mut dense = vec![vec![0u8; dim]; graph.node_count()];
        for (id, bits) in feat_rows {
            if bits.len() != dim {
                return Err(Error::Input(format!(
                    "ego {ego}: feature row of node {id} has {} entries, expected {dim}",
                    bits.len()
                )));
            }
            dense[lookup[&id]] = bits;
        }
        let egofeat = dir.join(format!("{ego}.egofeat"));
        if egofeat.exists() {
            let bits: Vec<u8> = read(&egofeat)?
                .split_whitespace()
                .map(|t| u8::from(t == "1"))
                .collect();
            if bits.len() == dim {
                dense[lookup[&ego]] = bits;
            }
        }
        graph.with_attributes(Some(Attributes::from_dense(&dense)?))?
    };

    // circles: `name<TAB>id id ...`
    let text = read(&circles_path)?;
    let lookup = id_lookup(&graph);
    let mut communities = Vec::new();
    for (line, l) in data_lines(&text) {
        let mut members = Vec::new();
        for t in l.split_whitespace().skip(1) {
            let id = parse_id(&circles_path, line, t)?;
            let v = lookup.get(&id).copied().ok_or_else(|| {
                parse_err(&circles_path, line, format!("node {id} is not in ego network {ego}"))
            })?;
            members.push(v);
        }
        communities.push(members);
    }
    let communities = CommunitySet::new(graph.node_count(), communities)?;
    DatasetBundle::new(ego.to_string(), graph, communities)
}

/// Erdős–Rényi G(n, p), deterministic in `seed`.
pub fn gnp(n: usize, p: f64, seed: u64) -> Graph {
    let bundle = generate_sbm(&[n], p, p, seed).expect("valid probabilities");
    bundle.graph
}

/// Planted-partition graph: each block is one ground-truth community.
pub fn generate_sbm(block_sizes: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<DatasetBundle> {
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("probability {p} outside [0, 1]")));
        }
    }
    let n: usize = block_sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    for (b, &size) in block_sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(b, size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block[u] == block[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::build(n, edges, None)?;
    let mut communities = vec![Vec::new(); block_sizes.len()];
    for (v, &b) in block.iter().enumerate() {
        communities[b].push(v);
    }
    let communities = CommunitySet::new(n, communities)?;
    DatasetBundle::new("sbm", graph, communities)
}

/// Writes sparse attributes in the `.attrs` format.
pub fn write_attributes(graph: &Graph, path: &Path) -> Result<()> {
    let attrs = graph
        .attributes()
        .ok_or_else(|| Error::Input("graph has no attributes".into()))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = format!("# dim={}\n", attrs.dim());
    for v in 0..graph.node_count() {
        let bits: Vec<String> = attrs.row(v).iter().map(u32::to_string).collect();
        out.push_str(&format!("{}\t{}\n", graph.label_of(v), bits.join(" ")));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
