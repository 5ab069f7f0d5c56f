fn main() -> anyhow::Result<()> {
    alda_lab::harness::cli_main()
}
