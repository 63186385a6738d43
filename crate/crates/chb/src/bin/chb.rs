fn main() {
    std::process::exit(chb::app::run());
}
