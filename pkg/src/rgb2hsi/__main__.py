from rgb2hsi.cli import main

main()
