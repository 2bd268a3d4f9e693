fn main() {
    std::process::exit(websal::run())
}
