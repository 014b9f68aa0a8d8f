//! The transcribed UDHR identity and article tables, shipped as versioned
//! data files so the expansion-count invariants are checkable against the
//! exact text in the repository.

use icm_core::datasets::{expand_udhr, IdentityCategory, IdentityTerm, RightsArticle};
use icm_core::model::Dataset;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identity terms, one `category<TAB>surface` pair per line.
pub const IDENTITIES_TSV: &str = include_str!("../data/udhr_identities.tsv");

/// Rights articles, one `current<TAB>ideal<TAB>reversed` triple per line,
/// with the `{people}` placeholder marking the identity slot.
pub const ARTICLES_TSV: &str = include_str!("../data/udhr_articles.tsv");

#[derive(Debug, Error)]
pub enum UdhrDataError {
    #[error("identities line {line}: expected category<TAB>surface, got {text:?}")]
    BadIdentityLine { line: usize, text: String },
    #[error("identities line {line}: unknown category {category:?}")]
    UnknownCategory { line: usize, category: String },
    #[error("articles line {line}: expected current<TAB>ideal<TAB>reversed, got {text:?}")]
    BadArticleLine { line: usize, text: String },
}

/// Parses the embedded identity table.
pub fn identity_terms() -> Result<Vec<IdentityTerm>, UdhrDataError> {
    let mut terms = Vec::new();
    for (i, line) in IDENTITIES_TSV.lines().enumerate() {
        let line_no = i + 1;
        let (category, surface) = line
            .split_once('\t')
            .filter(|(c, s)| !c.is_empty() && !s.is_empty())
            .ok_or_else(|| UdhrDataError::BadIdentityLine { line: line_no, text: line.to_owned() })?;
        let category = IdentityCategory::parse(category)
            .ok_or_else(|| UdhrDataError::UnknownCategory { line: line_no, category: category.to_owned() })?;
        terms.push(IdentityTerm { category, surface: surface.to_owned() });
    }
    Ok(terms)
}

/// Parses the embedded article table.
pub fn rights_articles() -> Result<Vec<RightsArticle>, UdhrDataError> {
    let mut articles = Vec::new();
    for (i, line) in ARTICLES_TSV.lines().enumerate() {
        let line_no = i + 1;
        let bad = || UdhrDataError::BadArticleLine { line: line_no, text: line.to_owned() };
        let mut parts = line.split('\t');
        let current_text = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
        let ideal_text = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
        let reversed = match parts.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        articles.push(RightsArticle {
            current_text: current_text.to_owned(),
            ideal_text: ideal_text.to_owned(),
            reversed,
        });
    }
    Ok(articles)
}

/// Expands the embedded tables into the full benchmark dataset.
pub fn expand() -> anyhow::Result<Dataset> {
    let identities = identity_terms()?;
    let articles = rights_articles()?;
    Ok(expand_udhr(&identities, &articles)?)
}

/// SHA-256 of the (identities, articles) table files, pinning the
/// transcription the counts were verified against.
pub fn table_checksums() -> (String, String) {
    let digest = |text: &str| hex::encode(Sha256::digest(text.as_bytes()));
    (digest(IDENTITIES_TSV), digest(ARTICLES_TSV))
}
