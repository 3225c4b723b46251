//! Binary checkpoints: model kind, hyperparameters and the flat parameter
//! vector (little-endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Hyperparams, ModelKind, NeuralError, Reranker};

const MAGIC: &[u8; 8] = b"REGIRCKP";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &Reranker,
    hp: &Hyperparams,
) -> Result<(), NeuralError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match model.kind() {
        ModelKind::Drmm => 0u8,
        ModelKind::Pacrr => 1u8,
    }])?;
    let text = hp.to_text();
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Reranker, Hyperparams), NeuralError> {
    let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = match kind[0] {
        0 => ModelKind::Drmm,
        1 => ModelKind::Pacrr,
        _ => return Err(bad("unknown model kind")),
    };
    let len = read_u32(&mut r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| bad("hyperparameters are not utf-8"))?;
    let hp = Hyperparams::parse(&text)?;
    let arch = hp.architecture(kind);
    let n = read_u32(&mut r)? as usize;
    if n != arch.num_net_params() + 2 {
        return Err(NeuralError::Checkpoint(format!(
            "expected {} parameters, found {n}",
            arch.num_net_params() + 2
        )));
    }
    let mut params = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    Ok((Reranker { arch, params }, hp))
}

pub fn save_checkpoint(path: &Path, model: &Reranker, hp: &Hyperparams) -> Result<(), NeuralError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, hp)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Reranker, Hyperparams), NeuralError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_both_kinds() {
        let hp = Hyperparams {
            filters: 3,
            ..Hyperparams::default()
        };
        for kind in [ModelKind::Drmm, ModelKind::Pacrr] {
            let model = Reranker::init(hp.architecture(kind), &mut ChaCha8Rng::seed_from_u64(9));
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &model, &hp).unwrap();
            let (back, hp2) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back, model);
            assert_eq!(hp2, hp);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
    }
}
