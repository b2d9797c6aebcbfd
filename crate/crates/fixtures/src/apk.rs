use std::io::{Cursor, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipWriter};

/// Zip archive holding `entries` in the given order, deflated.
pub fn zip_archive(entries: &[(&str, &[u8])]) -> Vec<u8> {
    zip_with(entries, CompressionMethod::Deflated)
}

/// Same as [`zip_archive`] but with every entry stored uncompressed, so
/// entry bytes appear verbatim in the archive.
pub fn zip_archive_stored(entries: &[(&str, &[u8])]) -> Vec<u8> {
    zip_with(entries, CompressionMethod::Stored)
}

fn zip_with(entries: &[(&str, &[u8])], method: CompressionMethod) -> Vec<u8> {
    let mut w = ZipWriter::new(Cursor::new(Vec::new()));
    // fixed timestamp keeps archives byte-identical across runs
    let opts = SimpleFileOptions::default()
        .compression_method(method)
        .last_modified_time(zip::DateTime::default());
    for (name, data) in entries {
        w.start_file(*name, opts).expect("start zip entry");
        w.write_all(data).expect("write zip entry");
    }
    w.finish().expect("finish zip").into_inner()
}

/// An APK-shaped archive: a manifest stub, `classes.dex`, further
/// `classesN.dex` entries, and a resources stub.
pub fn apk(dexes: &[Vec<u8>]) -> Vec<u8> {
    let names: Vec<String> = (0..dexes.len())
        .map(|i| if i == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", i + 1) })
        .collect();
    let mut entries: Vec<(&str, &[u8])> = vec![("AndroidManifest.xml", b"\x03\x00\x08\x00")];
    for (n, d) in names.iter().zip(dexes) {
        entries.push((n, d));
    }
    entries.push(("resources.arsc", b"\x02\x00\x0c\x00"));
    zip_archive(&entries)
}
