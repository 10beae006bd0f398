from genbench.harness.cli import main

main()
