//! Fits the numeric quantizer and vocabulary on development patients, builds
//! token timelines and round-trips them through the binary archive.

use ehrseq::dataset::{Dataset, DatasetConfig};
use ehrseq::synth::{generate_cohort, SynthConfig};
use ehrseq::timeline::{dump_text, ArchiveReader, ArchiveWriter};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 120, note_weight: 1.5, seed: 9, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 9, min_count: 3, ..DatasetConfig::default() })?;
    println!("vocabulary: {} tokens", ds.vocab.size());
    println!("heart_rate deciles: {:?}", ds.quantizer.cuts("Observation:heart_rate"));

    let timelines: Vec<_> = ds.timelines().cloned().collect();
    let total: usize = timelines.iter().map(|t| t.occurrences.len()).sum();
    println!("{} timelines, {total} token occurrences", timelines.len());

    let mut w = ArchiveWriter::new(Vec::new())?;
    for t in &timelines {
        w.write(t)?;
    }
    let bytes = w.finish()?;
    let back = ArchiveReader::new(&bytes[..])?.read_all()?;
    println!("archive: {} bytes, round trip equal: {}", bytes.len(), back == timelines);

    let mut text = Vec::new();
    dump_text(&timelines[..1], &ds.vocab, &mut text)?;
    for line in String::from_utf8(text)?.lines().take(15) {
        println!("{line}");
    }
    Ok(())
}
