from mpfm.frontend.cli import main

main()
