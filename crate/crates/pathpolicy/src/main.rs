fn main() {
    // Die quietly when a downstream pipe closes, like any stream filter;
    // Rust ignores SIGPIPE by default and println! would panic instead.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(pathpolicy::run());
}
