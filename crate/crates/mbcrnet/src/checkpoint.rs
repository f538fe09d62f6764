//! Versioned binary container for model checkpoints and preprocessed tensor
//! caches.
//!
//! Layout (all integers little-endian):
//!   magic "MBCR" | version u32 | kv_len u32 | kv UTF-8 "key=value\n" lines |
//!   tensor_count u32 | tensors...
//! Each tensor: name_len u32 | name UTF-8 | rank u32 | extents u64 x rank |
//! data f64 x product. Round-trips are bit-exact.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MBCR";
pub const VERSION: u32 = 1;

const MAX_KV_BYTES: u32 = 1 << 20;
const MAX_TENSORS: u32 = 1 << 20;
const MAX_NAME_BYTES: u32 = 4096;
const MAX_RANK: u32 = 8;

/// Key/value header plus named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub kv: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_container<W: Write>(w: &mut W, c: &Container) -> Result<()> {
    let mut kv_text = String::new();
    for (k, v) in &c.kv {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Format(format!("kv entry {k:?} contains '=' or newline")));
        }
        kv_text.push_str(k);
        kv_text.push('=');
        kv_text.push_str(v);
        kv_text.push('\n');
    }
    if kv_text.len() as u64 > MAX_KV_BYTES as u64 {
        return Err(Error::Format("kv header too large".into()));
    }

    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(kv_text.len() as u32).to_le_bytes())?;
    w.write_all(kv_text.as_bytes())?;
    w.write_all(&(c.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &c.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parse a container from untrusted bytes. Allocation is bounded by the
/// actual stream length: lengths are sanity-capped and tensor data is read
/// in chunks so a lying header cannot trigger a huge up-front allocation.
pub fn read_container<R: Read>(r: &mut R) -> Result<Container> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"MBCR\"")));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }

    let kv_len = read_u32(r, "kv length")?;
    if kv_len > MAX_KV_BYTES {
        return Err(Error::Format(format!("kv header of {kv_len} bytes exceeds cap")));
    }
    let kv_bytes = read_vec(r, kv_len as usize, "kv header")?;
    let kv_text =
        String::from_utf8(kv_bytes).map_err(|_| Error::Format("kv header is not UTF-8".into()))?;
    let mut kv = Vec::new();
    for line in kv_text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("kv line without '=': {line:?}")))?;
        kv.push((k.to_string(), v.to_string()));
    }

    let count = read_u32(r, "tensor count")?;
    if count > MAX_TENSORS {
        return Err(Error::Format(format!("{count} tensors exceeds cap")));
    }
    let mut tensors = Vec::new();
    for i in 0..count {
        let name_len = read_u32(r, "tensor name length")?;
        if name_len > MAX_NAME_BYTES {
            return Err(Error::Format(format!("tensor {i} name of {name_len} bytes exceeds cap")));
        }
        let name_bytes = read_vec(r, name_len as usize, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?;
        let rank = read_u32(r, "tensor rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor {name:?} has invalid rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = read_u64(r, "tensor extent")?;
            if e == 0 || e > u32::MAX as u64 {
                return Err(Error::Format(format!("tensor {name:?} has invalid extent {e}")));
            }
            numel = numel
                .checked_mul(e)
                .filter(|&n| n <= i64::MAX as u64 / 8)
                .ok_or_else(|| Error::Format(format!("tensor {name:?} element count overflows")))?;
            shape.push(e as usize);
        }
        let data = read_f64s(r, numel as usize)?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, tensor));
    }
    Ok(Container { kv, tensors })
}

pub fn write_container_file(path: &Path, c: &Container) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_container(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn read_container_file(path: &Path) -> Result<Container> {
    let file =
        File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_container(&mut BufReader::new(file))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

// ── Model checkpoints ───────────────────────────────────────────────────

/// Serialize a model: spec as kv, every parameter tensor, and every
/// batchnorm running mean/variance.
pub fn model_to_container(model: &Model, extra_kv: &[(String, String)]) -> Container {
    let mut kv = vec![("kind".to_string(), "checkpoint".to_string())];
    kv.extend(model.spec.to_kv());
    kv.extend(extra_kv.iter().cloned());

    let mut tensors = Vec::new();
    model.visit_params(&mut |name, t| {
        tensors.push((name, t.clone()));
    });
    model.visit_units(&mut |name, unit| {
        let c = unit.running.mean.len();
        tensors.push((
            format!("{name}.running_mean"),
            Tensor::new(vec![c], unit.running.mean.clone()).expect("stats shape"),
        ));
        tensors.push((
            format!("{name}.running_var"),
            Tensor::new(vec![c], unit.running.var.clone()).expect("stats shape"),
        ));
    });
    Container { kv, tensors }
}

/// Rebuild a model from a checkpoint container. Every stored tensor must
/// match a parameter or running statistic of the rebuilt spec, and none may
/// be missing.
pub fn model_from_container(c: &Container) -> Result<Model> {
    if c.get("kind") != Some("checkpoint") {
        return Err(Error::Format(format!(
            "container kind {:?} is not a checkpoint",
            c.get("kind").unwrap_or("absent")
        )));
    }
    let spec = ModelSpec::from_kv(&c.kv)?;
    let mut model = Model::build(&spec, 0)?;

    let lookup =
        |name: &str| -> Option<&Tensor> { c.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t) };

    let mut missing: Vec<String> = Vec::new();
    let mut mismatched: Vec<String> = Vec::new();
    model.visit_params_mut(&mut |name, t| match lookup(&name) {
        Some(stored) if stored.shape() == t.shape() => {
            t.data_mut().copy_from_slice(stored.data());
        }
        Some(_) => mismatched.push(name),
        None => missing.push(name),
    });
    model.visit_units_mut(&mut |name, unit| {
        for (suffix, field) in
            [("running_mean", &mut unit.running.mean), ("running_var", &mut unit.running.var)]
        {
            let full = format!("{name}.{suffix}");
            match lookup(&full) {
                Some(stored) if stored.numel() == field.len() => {
                    field.copy_from_slice(stored.data());
                }
                Some(_) => mismatched.push(full),
                None => missing.push(full),
            }
        }
    });
    if let Some(name) = missing.first() {
        return Err(Error::Format(format!("checkpoint is missing tensor {name:?}")));
    }
    if let Some(name) = mismatched.first() {
        return Err(Error::Format(format!("checkpoint tensor {name:?} has wrong shape")));
    }

    // Reject stray tensors (likely corruption or a mismatched spec).
    let mut expected: BTreeSet<String> = BTreeSet::new();
    model.visit_params(&mut |name, _| {
        expected.insert(name);
    });
    model.visit_units(&mut |name, _| {
        expected.insert(format!("{name}.running_mean"));
        expected.insert(format!("{name}.running_var"));
    });
    if let Some((stray, _)) = c.tensors.iter().find(|(n, _)| !expected.contains(n)) {
        return Err(Error::Format(format!("checkpoint has unexpected tensor {stray:?}")));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model, extra_kv: &[(String, String)]) -> Result<()> {
    write_container_file(path, &model_to_container(model, extra_kv))
}

pub fn load_model(path: &Path) -> Result<(Model, Container)> {
    let c = read_container_file(path)?;
    let model = model_from_container(&c)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((model, c))
}

// ── Preprocessed tensor caches ──────────────────────────────────────────

/// One preprocessed record: id, binary label, and its [leads, window] tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: String,
    pub label: u8,
    pub tensor: Tensor,
}

pub fn cache_to_container(entries: &[CacheEntry], extra_kv: &[(String, String)]) -> Container {
    let mut kv = vec![
        ("kind".to_string(), "cache".to_string()),
        ("n_records".to_string(), entries.len().to_string()),
    ];
    kv.extend(extra_kv.iter().cloned());
    let mut tensors = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        kv.push((format!("record.{i}.id"), e.id.clone()));
        kv.push((format!("record.{i}.label"), e.label.to_string()));
        tensors.push((format!("tensor.{i}"), e.tensor.clone()));
    }
    Container { kv, tensors }
}

pub fn cache_from_container(c: &Container) -> Result<Vec<CacheEntry>> {
    if c.get("kind") != Some("cache") {
        return Err(Error::Format(format!(
            "container kind {:?} is not a cache",
            c.get("kind").unwrap_or("absent")
        )));
    }
    let n: usize = c
        .get("n_records")
        .ok_or_else(|| Error::Format("cache missing n_records".into()))?
        .parse()
        .map_err(|_| Error::Format("bad n_records".into()))?;
    let mut entries = Vec::with_capacity(n.min(65536));
    for i in 0..n {
        let id = c
            .get(&format!("record.{i}.id"))
            .ok_or_else(|| Error::Format(format!("cache missing record.{i}.id")))?
            .to_string();
        let label: u8 = c
            .get(&format!("record.{i}.label"))
            .ok_or_else(|| Error::Format(format!("cache missing record.{i}.label")))?
            .parse()
            .map_err(|_| Error::Format(format!("bad label for record {i}")))?;
        if label > 1 {
            return Err(Error::Format(format!("label {label} for record {i} is not binary")));
        }
        let tensor = c
            .tensors
            .iter()
            .find(|(name, _)| name == &format!("tensor.{i}"))
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("cache missing tensor.{i}")))?;
        entries.push(CacheEntry { id, label, tensor });
    }
    Ok(entries)
}

pub fn write_cache(
    path: &Path,
    entries: &[CacheEntry],
    extra_kv: &[(String, String)],
) -> Result<()> {
    write_container_file(path, &cache_to_container(entries, extra_kv))
}

pub fn read_cache(path: &Path) -> Result<(Vec<CacheEntry>, Container)> {
    let c = read_container_file(path)?;
    let entries = cache_from_container(&c)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((entries, c))
}

// ── Bounded readers ─────────────────────────────────────────────────────

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    // Grow in chunks so allocation never outruns the actual stream.
    const CHUNK: usize = 1 << 16;
    let mut out = Vec::with_capacity(len.min(CHUNK));
    let mut remaining = len;
    let mut buf = [0u8; CHUNK];
    while remaining > 0 {
        let take = remaining.min(CHUNK);
        read_exact(r, &mut buf[..take], what)?;
        out.extend_from_slice(&buf[..take]);
        remaining -= take;
    }
    Ok(out)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    const CHUNK: usize = 1 << 13;
    let mut out = Vec::with_capacity(count.min(CHUNK));
    let mut remaining = count;
    let mut buf = [0u8; CHUNK * 8];
    while remaining > 0 {
        let take = remaining.min(CHUNK);
        read_exact(r, &mut buf[..take * 8], "tensor data")?;
        for i in 0..take {
            out.push(f64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().unwrap()));
        }
        remaining -= take;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Variant};

    #[test]
    fn container_round_trip_is_bit_exact() {
        let c = Container {
            kv: vec![("kind".into(), "cache".into()), ("note".into(), "a=b ok in value".into())],
            tensors: vec![
                (
                    "x".into(),
                    Tensor::new(
                        vec![2, 3],
                        vec![1.5, -0.0, 3.25, f64::MIN_POSITIVE, 1e300, -7.0],
                    )
                    .unwrap(),
                ),
                ("y".into(), Tensor::scalar(0.1 + 0.2)),
            ],
        };
        let mut bytes = Vec::new();
        write_container(&mut bytes, &c).unwrap();
        let back = read_container(&mut &bytes[..]).unwrap();
        assert_eq!(back.kv, c.kv);
        for ((n1, t1), (n2, t2)) in back.tensors.iter().zip(c.tensors.iter()) {
            assert_eq!(n1, n2);
            assert!(t1.bits_eq(t2));
        }

        let mut again = Vec::new();
        write_container(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn reader_rejects_bad_magic_version_and_truncation() {
        let c = Container::default();
        let mut bytes = Vec::new();
        write_container(&mut bytes, &c).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_container(&mut &bad[..]), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(read_container(&mut &bad[..]).is_err());

        for cut in [0, 3, 5, bytes.len() - 1] {
            assert!(read_container(&mut &bytes[..cut]).is_err());
        }
    }

    #[test]
    fn reader_survives_lying_tensor_header() {
        // Header claims a huge tensor; the stream ends immediately.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes()); // empty kv
        bytes.extend_from_slice(&1u32.to_le_bytes()); // one tensor
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b't');
        bytes.extend_from_slice(&2u32.to_le_bytes()); // rank 2
        bytes.extend_from_slice(&(u32::MAX as u64).to_le_bytes());
        bytes.extend_from_slice(&(u32::MAX as u64).to_le_bytes());
        assert!(read_container(&mut &bytes[..]).is_err());
    }

    #[test]
    fn model_checkpoint_round_trip_is_bit_exact() {
        let spec = ModelSpec::mini(Variant::L);
        let mut model = Model::build(&spec, 21).unwrap();
        // Perturb running stats away from their defaults.
        model.visit_units_mut(&mut |_, unit| {
            for v in unit.running.mean.iter_mut() {
                *v += 0.125;
            }
        });

        let c = model_to_container(&model, &[("lead".into(), "V5".into())]);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &c).unwrap();
        let restored = model_from_container(&read_container(&mut &bytes[..]).unwrap()).unwrap();

        assert_eq!(restored.spec, model.spec);
        let mut originals = Vec::new();
        model.visit_params(&mut |name, t| originals.push((name, t.clone())));
        let mut i = 0;
        restored.visit_params(&mut |name, t| {
            assert_eq!(name, originals[i].0);
            assert!(t.bits_eq(&originals[i].1), "param {name} differs");
            assert!(t.requires_grad);
            i += 1;
        });
        let mut stats_a = Vec::new();
        model.visit_units(&mut |_, u| stats_a.push(u.running.clone()));
        let mut stats_b = Vec::new();
        restored.visit_units(&mut |_, u| stats_b.push(u.running.clone()));
        assert_eq!(stats_a, stats_b);
    }

    #[test]
    fn checkpoint_with_missing_or_stray_tensor_fails() {
        let model = Model::build(&ModelSpec::mini(Variant::F), 1).unwrap();
        let mut c = model_to_container(&model, &[]);
        let removed = c.tensors.remove(0);
        assert!(matches!(model_from_container(&c), Err(Error::Format(_))));

        c.tensors.push(removed);
        c.tensors.push(("bogus".into(), Tensor::scalar(1.0)));
        assert!(matches!(model_from_container(&c), Err(Error::Format(_))));
    }

    #[test]
    fn cache_round_trip() {
        let entries = vec![
            CacheEntry { id: "a".into(), label: 0, tensor: Tensor::zeros(vec![2, 4]) },
            CacheEntry { id: "b=c".into(), label: 1, tensor: Tensor::full(vec![2, 4], 0.5) },
        ];
        let c = cache_to_container(&entries, &[("window".into(), "4".into())]);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &c).unwrap();
        let back = cache_from_container(&read_container(&mut &bytes[..]).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "a");
        assert_eq!(back[1].id, "b=c");
        assert_eq!(back[1].label, 1);
        assert!(back[1].tensor.bits_eq(&entries[1].tensor));
    }
}
