from safees.cli import main

main()
