//! Binary mask container.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic        8 bytes  b"NFEMASK\x01"
//! header_len   u64
//! header       JSON: { plan, seed, sparsity, stem_len, stage_lens }
//! stem pai     ceil(stem_len / 8) bytes          (only if stem_len is set)
//! per stage i: pai mask, then groups_per_stage[i] group masks,
//!              each ceil(stage_lens[i] / 8) bytes, LSB-first
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FissionPlan, GroupMaskSet, Mask, StageMasks};
use crate::error::{Error, Result};

pub const MASK_MAGIC: &[u8; 8] = b"NFEMASK\x01";

#[derive(Serialize, Deserialize)]
struct Header {
    plan: FissionPlan,
    seed: u64,
    sparsity: f64,
    stem_len: Option<usize>,
    stage_lens: Vec<usize>,
}

pub fn write_mask_container<W: Write>(set: &GroupMaskSet, w: &mut W) -> Result<()> {
    let header = Header {
        plan: set.plan.clone(),
        seed: set.seed,
        sparsity: set.sparsity,
        stem_len: set.stem_pai.as_ref().map(Mask::len),
        stage_lens: set.stage_sizes(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    if let Some(stem) = &set.stem_pai {
        w.write_all(&stem.pack())?;
    }
    for sm in &set.stages {
        w.write_all(&sm.pai.pack())?;
        for g in &sm.groups {
            w.write_all(&g.pack())?;
        }
    }
    Ok(())
}

pub fn read_mask_container<R: Read>(r: &mut R) -> Result<GroupMaskSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MASK_MAGIC {
        return Err(Error::Format("not a mask container (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    header.plan.validate()?;
    if header.stage_lens.len() != header.plan.num_stages() {
        return Err(Error::Format("stage length list does not match plan".into()));
    }

    let mut read_mask = |bits: usize| -> Result<Mask> {
        let mut buf = vec![0u8; bits.div_ceil(8)];
        r.read_exact(&mut buf)?;
        Mask::unpack(&buf, bits)
    };
    let stem_pai = header.stem_len.map(&mut read_mask).transpose()?;
    let mut stages = Vec::with_capacity(header.stage_lens.len());
    for (i, &n) in header.stage_lens.iter().enumerate() {
        let pai = read_mask(n)?;
        let groups = (0..header.plan.groups(i)).map(|_| read_mask(n)).collect::<Result<Vec<_>>>()?;
        stages.push(StageMasks { pai, groups });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after mask container".into()));
    }
    let set = GroupMaskSet {
        plan: header.plan,
        seed: header.seed,
        sparsity: header.sparsity,
        stem_pai,
        stages,
    };
    set.validate()?;
    Ok(set)
}
