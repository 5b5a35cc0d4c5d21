//! Optional event trace, written as CSV for offline inspection.

use crate::error::SimError;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Append-only CSV sink recording fabric events.
///
/// One row per event: `cycle,port,direction,event,detail`. Rows are written
/// in simulation order, so two runs with equal configuration and seed
/// produce byte-identical traces.
pub struct TraceLog {
    writer: BufWriter<File>,
}

impl TraceLog {
    pub fn create(path: &Path) -> Result<TraceLog, SimError> {
        let name = path.display().to_string();
        let file = File::create(path).map_err(|e| SimError::io(name.clone(), e))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "cycle,port,direction,event,detail")
            .map_err(|e| SimError::io(name, e))?;
        Ok(TraceLog { writer })
    }

    pub fn event(&mut self, cycle: u64, port: usize, direction: &str, event: &str, detail: &str) {
        // Trace I/O failures must not alter simulation behavior; drop the row.
        let _ = writeln!(
            self.writer,
            "{cycle},{port},{direction},{event},{detail}"
        );
    }

    pub fn finish(mut self) {
        let _ = self.writer.flush();
    }
}

impl std::fmt::Debug for TraceLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TraceLog")
    }
}
