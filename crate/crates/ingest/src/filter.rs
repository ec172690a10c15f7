use std::collections::BTreeSet;

use trustgate_core::{Rank, Taxonomy};

use crate::{Error, Result};

/// Taxa of `rank` that are `clade_root` or descend from it.
pub fn filter_taxa(taxa: &Taxonomy, clade_root: i64, rank: Rank) -> Result<BTreeSet<i64>> {
    if taxa.get(clade_root).is_none() {
        return Err(Error::NotFound(clade_root));
    }
    Ok(taxa
        .iter()
        .filter(|t| t.rank == rank)
        .filter(|t| t.taxon_id == clade_root || t.ancestor_ids.contains(&clade_root))
        .map(|t| t.taxon_id)
        .collect())
}
