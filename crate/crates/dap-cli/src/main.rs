fn main() {
    // subcommands land here once the library pipeline is in place
}
