//! Comma-separated neuron and edge tables (FlyWire-style exports).
//!
//! Neuron table columns: `neuron_id, flow_class, superclass, nt_type`.
//! Edge table columns: `pre_id, post_id, syn_count[, nt_type]`.
//! Lines starting with `#` are comments. Reported line numbers are 1-based
//! physical lines of the file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Connectome, FlowClass, Neuron, NtType, SynapseEdge};
use crate::error::{Error, Result};

pub const NEURON_FILE: &str = "neurons.csv";
pub const EDGE_FILE: &str = "edges.csv";

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        line: 1,
        what: format!("missing column {name}"),
    })
}

fn parse_err(line: usize, what: impl Into<String>) -> Error {
    Error::Parse { line, what: what.into() }
}

pub fn parse_connectome(neuron_table: &Path, edge_table: &Path) -> Result<Connectome> {
    let nf = File::open(neuron_table).map_err(|e| Error::file(neuron_table, e))?;
    let ef = File::open(edge_table).map_err(|e| Error::file(edge_table, e))?;
    parse_connectome_from(nf, ef)
}

pub fn parse_connectome_from(neuron_table: impl Read, edge_table: impl Read) -> Result<Connectome> {
    let mut rdr = reader(neuron_table);
    let headers = rdr.headers()?.clone();
    let (c_id, c_flow, c_super, c_nt) = (
        column(&headers, "neuron_id")?,
        column(&headers, "flow_class")?,
        column(&headers, "superclass")?,
        column(&headers, "nt_type")?,
    );

    let mut rows: Vec<(u64, FlowClass, String, NtType, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id: u64 = field(c_id).parse().map_err(|_| parse_err(line, format!("bad neuron_id {:?}", field(c_id))))?;
        let flow: FlowClass = field(c_flow)
            .parse()
            .map_err(|_| parse_err(line, format!("unknown flow_class {:?}", field(c_flow))))?;
        rows.push((id, flow, field(c_super).to_string(), NtType::parse_lenient(field(c_nt)), line));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(parse_err(w[1].4, format!("duplicate neuron_id {}", w[1].0)));
        }
    }
    let remap: HashMap<u64, usize> = rows.iter().enumerate().map(|(i, r)| (r.0, i)).collect();
    let neurons: Vec<Neuron> = rows
        .into_iter()
        .enumerate()
        .map(|(id, (source_id, flow_class, superclass, nt_type, _))| Neuron {
            id,
            source_id,
            flow_class,
            superclass,
            nt_type,
        })
        .collect();

    let mut rdr = reader(edge_table);
    let headers = rdr.headers()?.clone();
    let (c_pre, c_post, c_count) = (column(&headers, "pre_id")?, column(&headers, "post_id")?, column(&headers, "syn_count")?);
    let c_ent = headers.iter().position(|h| h == "nt_type");

    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let endpoint = |i: usize| -> Result<usize> {
            let raw: u64 = field(i).parse().map_err(|_| parse_err(line, format!("bad neuron id {:?}", field(i))))?;
            remap
                .get(&raw)
                .copied()
                .ok_or_else(|| parse_err(line, format!("edge references absent neuron id {raw}")))
        };
        let pre = endpoint(c_pre)?;
        let post = endpoint(c_post)?;
        let count: i64 = field(c_count)
            .parse()
            .map_err(|_| parse_err(line, format!("bad syn_count {:?}", field(c_count))))?;
        if count <= 0 {
            return Err(parse_err(line, format!("syn_count must be positive, got {count}")));
        }
        let nt_override = c_ent.map(field).filter(|s| !s.is_empty()).map(NtType::parse_lenient);
        edges.push(SynapseEdge {
            pre,
            post,
            syn_count: count as u64,
            nt_override,
        });
    }
    Connectome::new(neurons, edges)
}

/// Writes both tables using source ids, so re-parsing yields an equal graph.
pub fn write_connectome(c: &Connectome, neuron_out: impl Write, edge_out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(neuron_out);
    w.write_record(["neuron_id", "flow_class", "superclass", "nt_type"])?;
    for n in c.neurons() {
        w.write_record([
            n.source_id.to_string().as_str(),
            n.flow_class.as_str(),
            n.superclass.as_str(),
            n.nt_type.as_str(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(edge_out);
    w.write_record(["pre_id", "post_id", "syn_count", "nt_type"])?;
    let src = |i: usize| c.neurons()[i].source_id.to_string();
    for e in c.edges() {
        w.write_record([
            src(e.pre).as_str(),
            src(e.post).as_str(),
            e.syn_count.to_string().as_str(),
            e.nt_override.map_or("", NtType::as_str),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_connectome_dir(c: &Connectome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let np = dir.join(NEURON_FILE);
    let ep = dir.join(EDGE_FILE);
    let nf = File::create(&np).map_err(|e| Error::file(&np, e))?;
    let ef = File::create(&ep).map_err(|e| Error::file(&ep, e))?;
    write_connectome(c, nf, ef)
}

pub fn read_connectome_dir(dir: &Path) -> Result<Connectome> {
    parse_connectome(&dir.join(NEURON_FILE), &dir.join(EDGE_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEURONS: &str = "\
# three-neuron fixture
neuron_id,flow_class,superclass,nt_type
720575940000000010,afferent,sensory,ACH
720575940000000020,intrinsic,central,GABA
720575940000000030,efferent,motor,ACH
";

    #[test]
    fn three_neuron_fixture() {
        let edges = "pre_id,post_id,syn_count\n720575940000000010,720575940000000020,3\n720575940000000020,720575940000000030,5\n";
        let c = parse_connectome_from(NEURONS.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.edges().len(), 2);
        assert_eq!(c.partition().sizes(), (1, 1, 1));
        assert_eq!(c.neurons()[1].superclass, "central");
    }

    #[test]
    fn duplicate_rows_are_summed() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n5,afferent,sensory,ACH\n9,efferent,motor,ACH\n";
        let edges = "pre_id,post_id,syn_count\n5,9,3\n5,9,4\n";
        let c = parse_connectome_from(neurons.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(c.edges().len(), 1);
        assert_eq!(c.edges()[0].syn_count, 7);
    }

    #[test]
    fn ids_are_remapped_by_ascending_source_id() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n90,efferent,motor,ACH\n7,afferent,sensory,GLU\n";
        let edges = "pre_id,post_id,syn_count\n7,90,1\n";
        let c = parse_connectome_from(neurons.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(c.neurons()[0].source_id, 7);
        assert_eq!(c.neurons()[0].nt_type, NtType::Glu);
        assert_eq!((c.edges()[0].pre, c.edges()[0].post), (0, 1));
    }

    #[test]
    fn unknown_flow_class_names_the_line() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n# comment\n1,afferent,sensory,ACH\n2,ascending,ascending,ACH\n";
        let err = parse_connectome_from(neurons.as_bytes(), "pre_id,post_id,syn_count\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown flow_class"), "{msg}");
        assert!(msg.contains("at line 4"), "{msg}");
    }

    #[test]
    fn absent_neuron_and_bad_counts_are_errors() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n1,afferent,sensory,ACH\n2,efferent,motor,ACH\n";
        let err = parse_connectome_from(neurons.as_bytes(), "pre_id,post_id,syn_count\n1,2,1\n1,3,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("at line 3"), "{err}");
        let err = parse_connectome_from(neurons.as_bytes(), "pre_id,post_id,syn_count\n1,2,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("syn_count"), "{err}");
        let err = parse_connectome_from(neurons.as_bytes(), "pre_id,post_id,syn_count\n1,2,-4\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("syn_count"), "{err}");
    }

    #[test]
    fn per_edge_transmitter_column_is_optional() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n1,afferent,sensory,ACH\n2,efferent,motor,ACH\n";
        let edges = "pre_id,post_id,syn_count,nt_type\n1,2,5,ACH\n1,2,2,GABA\n";
        let c = parse_connectome_from(neurons.as_bytes(), edges.as_bytes()).unwrap();
        assert_eq!(c.edges().len(), 2);
        assert_eq!(c.edges()[1].nt_override, Some(NtType::Gaba));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let neurons = "neuron_id,flow_class,superclass,nt_type\n11,afferent,sensory,ACH\n4,intrinsic,central,GLY\n30,efferent,motor,UNKNOWN\n";
        let edges = "pre_id,post_id,syn_count,nt_type\n11,4,5,\n4,30,2,GABA\n4,4,1,\n";
        let c = parse_connectome_from(neurons.as_bytes(), edges.as_bytes()).unwrap();
        let (mut nb, mut eb) = (Vec::new(), Vec::new());
        write_connectome(&c, &mut nb, &mut eb).unwrap();
        let back = parse_connectome_from(nb.as_slice(), eb.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
