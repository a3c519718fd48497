from ipwqr.cli import main

main()
