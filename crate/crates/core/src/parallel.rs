/// Sizes the global worker pool from `DESDIS_THREADS` (default: all cores).
///
/// Returns the number of workers in use. Only the first call configures the
/// pool; later calls report the existing size.
pub fn configure_threads() -> usize {
    if let Some(n) = std::env::var("DESDIS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
