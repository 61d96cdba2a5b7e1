use super::{parse_step, validate_regions, MemoryTrace, Trajectory};

/// 1 when every raw step parses and every region is valid against the
/// sources that existed before its step; 0 otherwise.
pub fn trajectory_format_valid(traj: &Trajectory, originals: &[(usize, usize)]) -> bool {
    let mut memory = MemoryTrace::from_originals(originals);
    traj.raw.iter().all(|raw| {
        let Ok(step) = parse_step(raw) else {
            return false;
        };
        if validate_regions(&step, &memory).is_err() {
            return false;
        }
        for r in step.regions() {
            memory.append_crop(r).expect("validated above");
        }
        true
    })
}
