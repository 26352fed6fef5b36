from minkalpha.cli import main

main()
