//! Pretrained word-embedding loader (plain text: `word v1 v2 ... vd` per
//! line) and embedding-table assembly for a corpus vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;

use ataml_core::encoder::EmbeddingTable;

pub struct PretrainedEmbeddings {
    pub vectors: HashMap<String, Vec<f64>>,
    pub dim: usize,
    pub skipped_lines: usize,
}

/// Loads a text-format embedding file. The dimension is inferred from the
/// first valid line; later lines with a different width are skipped and
/// counted.
pub fn load_text(path: &Path) -> Result<PretrainedEmbeddings> {
    let file =
        File::open(path).with_context(|| format!("cannot open embeddings {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut vectors = HashMap::new();
    let mut dim = 0usize;
    let mut skipped = 0usize;
    for line in reader.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w.to_string(),
            None => continue,
        };
        let values: Option<Vec<f64>> = parts.map(|p| p.parse::<f64>().ok()).collect();
        let values = match values {
            Some(v) if !v.is_empty() => v,
            _ => {
                skipped += 1;
                continue;
            }
        };
        if dim == 0 {
            dim = values.len();
        }
        if values.len() != dim {
            skipped += 1;
            continue;
        }
        vectors.insert(word, values);
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} malformed embedding lines");
    }
    if vectors.is_empty() {
        bail!("embedding file {} has no usable vectors", path.display());
    }
    Ok(PretrainedEmbeddings {
        vectors,
        dim,
        skipped_lines: skipped,
    })
}

/// Builds the embedding table for a corpus vocabulary. Words present in
/// the pretrained set take their vectors; the rest are drawn uniform in
/// [−0.05, 0.05]. Without a pretrained set every row is random.
pub fn build_table(
    token_vocab: &std::collections::BTreeMap<String, usize>,
    pretrained: Option<&PretrainedEmbeddings>,
    d_emb: usize,
    rng: &mut impl Rng,
) -> EmbeddingTable {
    let dim = pretrained.map(|p| p.dim).unwrap_or(d_emb);
    let n = token_vocab.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (word, &id) in token_vocab {
        assert!(id < n, "vocabulary ids must be dense in 0..n");
        let row = pretrained
            .and_then(|p| p.vectors.get(word).cloned())
            .unwrap_or_else(|| (0..dim).map(|_| rng.gen_range(-0.05..0.05)).collect());
        rows[id] = row;
    }
    EmbeddingTable::from_rows(token_vocab.clone(), rows, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write as _;

    #[test]
    fn loads_and_infers_dimension() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "tax 0.1 0.2 0.3").unwrap();
        writeln!(f, "cut -1.0 0.0 1.0").unwrap();
        writeln!(f, "broken 0.1 oops 0.3").unwrap();
        writeln!(f, "short 0.5").unwrap();
        let p = load_text(f.path()).unwrap();
        assert_eq!(p.dim, 3);
        assert_eq!(p.vectors.len(), 2);
        assert_eq!(p.skipped_lines, 2);
        assert_eq!(p.vectors["cut"], vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_text(f.path()).is_err());
    }

    #[test]
    fn table_uses_pretrained_rows_and_fills_the_rest() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "tax 1.0 2.0").unwrap();
        let p = load_text(f.path()).unwrap();
        let vocab: std::collections::BTreeMap<String, usize> =
            [("tax".to_string(), 0), ("cut".to_string(), 1)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = build_table(&vocab, Some(&p), 300, &mut rng);
        assert_eq!(table.dim(), 2);
        assert_eq!(table.matrix.get(0, 0), 1.0);
        assert_eq!(table.matrix.get(0, 1), 2.0);
        // unknown word got a small random row, not zeros
        assert!(table.matrix.get(1, 0).abs() <= 0.05);
        assert_eq!(table.row_of("nonsense"), table.oov_row);
    }

    #[test]
    fn without_pretrained_every_row_is_random_at_d_emb() {
        let vocab: std::collections::BTreeMap<String, usize> =
            [("a".to_string(), 0), ("b".to_string(), 1)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = build_table(&vocab, None, 7, &mut rng);
        assert_eq!(table.dim(), 7);
        assert_eq!(table.n_rows(), 4); // two words + oov + pad
    }
}
