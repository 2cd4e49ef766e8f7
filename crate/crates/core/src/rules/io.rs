use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{HornRule, RuleMetrics, TransformedNeighbor};
use crate::kg::{EntityId, Vocab};
use crate::{Error, Result};

/// One rule per line: `r1,r2,…<TAB>=><TAB>head<TAB>support<TAB>hc<TAB>conf`.
pub fn write_rules(path: &Path, rules: &[(HornRule, RuleMetrics)], vocab: &Vocab) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (rule, m) in rules {
        let body: Vec<String> = rule.body.iter().map(|&r| vocab.relation_label(r)).collect();
        writeln!(
            w,
            "{}\t=>\t{}\t{}\t{}\t{}",
            body.join(","),
            vocab.relation_label(rule.head),
            m.support,
            m.head_coverage,
            m.confidence
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rules(path: &Path, vocab: &Vocab) -> Result<Vec<(HornRule, RuleMetrics)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [body, arrow, head, support, hc, conf] = fields.as_slice() else {
            return Err(parse_err(n + 1, format!("expected 6 fields, found {}", fields.len())));
        };
        if *arrow != "=>" {
            return Err(parse_err(n + 1, "missing '=>' separator".into()));
        }
        let body = body
            .split(',')
            .map(|label| vocab.relation_id(label))
            .collect::<Result<Vec<_>>>()?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(n + 1, format!("bad number '{s}': {e}")));
        out.push((
            HornRule::new(body, vocab.relation_id(head)?),
            RuleMetrics {
                support: support
                    .parse()
                    .map_err(|e| parse_err(n + 1, format!("bad support '{support}': {e}")))?,
                head_coverage: num(hc)?,
                confidence: num(conf)?,
            },
        ));
    }
    Ok(out)
}

/// One transformed neighbor per line:
/// `source<TAB>relation<TAB>target<TAB>hc<TAB>conf<TAB>l_norm<TAB>s<TAB>rule`,
/// grouped by source entity in id order.
pub fn write_neighbors(path: &Path, neighbors: &[Vec<TransformedNeighbor>], vocab: &Vocab) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (source, list) in neighbors.iter().enumerate() {
        let source = vocab.entity_label(EntityId(source as u32));
        for n in list {
            writeln!(
                w,
                "{source}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                vocab.relation_label(n.rel),
                vocab.entity_label(n.entity),
                n.hc,
                n.conf,
                n.l_norm,
                n.s,
                n.rule
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_neighbors(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<TransformedNeighbor>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut out = vec![Vec::new(); vocab.entity_count()];
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [source, rel, target, hc, conf, l_norm, s, rule] = fields.as_slice() else {
            return Err(parse_err(n + 1, format!("expected 8 fields, found {}", fields.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(n + 1, format!("bad number '{s}': {e}")));
        out[vocab.entity_id(source)?.index()].push(TransformedNeighbor {
            rel: vocab.relation_id(rel)?,
            entity: vocab.entity_id(target)?,
            hc: num(hc)?,
            conf: num(conf)?,
            l_norm: num(l_norm)?,
            s: num(s)?,
            rule: rule
                .parse()
                .map_err(|e| parse_err(n + 1, format!("bad rule index '{rule}': {e}")))?,
        });
    }
    Ok(out)
}
