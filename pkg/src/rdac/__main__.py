from rdac.cli import main

main()
